import subprocess
import sys

import pytest

from swarmsim import cli
from swarmsim.harness import SWEEP_HEADER

SMALL = ["--runs", "1", "--config"]


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.conf"
    path.write_text("leecher_count = 4\ncontent_size = 256kB\norder_mode = random\n")
    return str(path)


def test_run_prints_table(tiny_config, tmp_path, capsys):
    code = cli.main(["run", *SMALL, tiny_config, "--piece-size", "32kB", "--out-dir", str(tmp_path / "o")])
    out = capsys.readouterr().out.splitlines()
    assert code == 0
    assert out[0] == ",".join(SWEEP_HEADER)
    assert out[1].startswith("256,32,") and out[1].endswith(",ok")
    assert (tmp_path / "o" / "sweep.csv").exists()
    assert (tmp_path / "o" / "cdf_c256k_p32k.csv").exists()


def test_sweep_lists_and_overrides(tiny_config, tmp_path, capsys):
    code = cli.main(
        ["sweep", *SMALL, tiny_config, "--content-size", "128kB,256kB", "--piece-size", "16kB,64kB",
         "--delay-ms", "10", "--tcp-model", "ramp", "--seed", "3", "--no-charts", "--out-dir", str(tmp_path)]
    )
    rows = capsys.readouterr().out.splitlines()[1:]
    assert code == 0
    assert [r.split(",")[:2] for r in rows] == [["128", "16"], ["128", "64"], ["256", "16"], ["256", "64"]]
    assert not list(tmp_path.glob("*.svg"))


def test_bad_config_exits_nonzero_before_running(tmp_path, capsys, monkeypatch):
    bad = tmp_path / "bad.conf"
    bad.write_text("pice_size = 64kB\n")
    monkeypatch.setattr(cli, "sweep", lambda *a, **k: pytest.fail("sweep must not start"))
    assert cli.main(["run", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_unwritable_out_dir_fails_preflight(tmp_path, capsys, monkeypatch):
    blocker = tmp_path / "file"
    blocker.write_text("")
    monkeypatch.setattr(cli, "sweep", lambda *a, **k: pytest.fail("sweep must not start"))
    assert cli.main(["run", "--out-dir", str(blocker / "out")]) == 2
    assert "not writable" in capsys.readouterr().err


def test_invalid_cell_override(tmp_path, capsys):
    code = cli.main(["run", "--piece-size", "8kB", "--out-dir", str(tmp_path)])
    assert code == 2 and "subpiece_size" in capsys.readouterr().err


def test_failed_row_exit_code(tmp_path, capsys):
    conf = tmp_path / "stall.conf"
    conf.write_text("leecher_count = 4\ncontent_size = 256kB\npiece_size = 32kB\nhorizon = 1\nruns = 1\n")
    assert cli.main(["run", "--config", str(conf), "--out-dir", str(tmp_path / "o")]) == 1
    captured = capsys.readouterr()
    assert ",error: " in captured.out and "1 scenario(s) failed" in captured.err


def test_argparse_rejects_bad_choice(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["run", "--order-mode", "sorted"])
    assert e.value.code == 2


def test_module_entry_point(tiny_config, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "swarmsim", "run", *SMALL, tiny_config, "--out-dir", str(tmp_path), "--no-charts"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("content_kb,piece_kb,")
