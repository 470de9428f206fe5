import json
from dataclasses import replace

import pytest

from swarmsim.content import KB, MB
from swarmsim.engine import LinkModel
from swarmsim.harness import (
    SWEEP_HEADER,
    CapacityDist,
    ConfigError,
    ExperimentError,
    Scenario,
    SweepGrid,
    check_writable,
    emit_outputs,
    format_scenario,
    parse_config,
    parse_scenario,
    run_experiment,
    series_stem,
    sweep,
)
from swarmsim.protocol import OrderMode

TINY = Scenario(leecher_count=4, content_size=256 * KB, piece_size=32 * KB, runs=2)


def test_empty_config_gives_defaults():
    s = parse_scenario("")
    assert s == Scenario()
    assert (s.leecher_count, s.seed_cap, s.upload_slots, s.rechoke_period) == (40, 200 * KB, 4, 10.0)
    assert s.leecher_caps == CapacityDist("uniform", 20 * KB, 200 * KB)
    assert (s.subpiece_size, s.pipeline_depth, s.runs) == (16 * KB, 5, 5)
    assert s.order_mode is OrderMode.DETERMINISTIC
    assert s.link == LinkModel(0.05, "off")


def test_piece_smaller_than_subpiece_rejected():
    with pytest.raises(ConfigError, match="subpiece_size"):
        parse_scenario("piece_size = 8kB\nsubpiece_size = 16kB")


def test_unknown_key_rejected_with_line_number():
    with pytest.raises(ConfigError, match="line 2: unknown key 'pice_size'"):
        parse_scenario("runs = 2\npice_size = 64kB\n")


@pytest.mark.parametrize(
    "text",
    ["runs = 0", "seed_cap = 0", "pipeline_depth = 17", "leecher_caps = uniform 200 20", "link.tcp_model = vegas",
     "order_mode = sorted", "endgame = maybe", "runs"],
)
def test_bad_values_rejected(text):
    with pytest.raises(ConfigError):
        parse_scenario(text)


def test_config_values_and_units():
    s, grid = parse_config(
        """
        # comment lines and trailing comments are ignored
        leecher_count = 8
        leecher_caps = constant 50kB   # per leecher
        seed_cap = 1MB/s
        choke.rechoke_period = 5s
        content_size = 1MB
        piece_size = 64kB
        order_mode = random
        link.one_way_delay = 20ms
        link.tcp_model = ramp
        sweep.content_sizes = 1MB, 5MB
        sweep.piece_sizes = 16kB 32kB
        """
    )
    assert s.capacities() == [50 * KB] * 8
    assert (s.seed_cap, s.rechoke_period, s.order_mode) == (MB, 5.0, OrderMode.RANDOM)
    assert s.link.one_way_delay == pytest.approx(0.02) and s.link.tcp_model == "ramp"
    assert grid == SweepGrid((MB, 5 * MB), (16 * KB, 32 * KB))


def test_format_round_trips():
    s = Scenario(leecher_count=7, order_mode=OrderMode.RANDOM, link=LinkModel(0.01, "ramp"), endgame=True)
    assert parse_scenario(format_scenario(s)) == s


def test_capacity_vectors_reproducible():
    a = parse_scenario("rng_seed = 42").capacities(0)
    b = parse_scenario("rng_seed = 42").capacities(0)
    assert a == b and len(a) == 40
    assert all(20 * KB <= x <= 200 * KB for x in a)
    s = Scenario(rng_seed=42)
    assert s.capacities(1) != s.capacities(0)
    frozen = replace(s, freeze_caps=True)
    assert frozen.capacities(1) == frozen.capacities(0)


def test_run_experiment_five_runs_of_forty():
    s = Scenario(content_size=512 * KB, piece_size=64 * KB)
    bundles = run_experiment(s)
    assert len(bundles) == 5
    assert all(len(b.completion_times) == 40 and b.all_complete for b in bundles)


def test_zero_leechers_gives_one_empty_bundle():
    (b,) = run_experiment(Scenario(leecher_count=0, runs=1))
    assert b.completion_times == {}
    result = sweep(SweepGrid((MB,), (256 * KB,)), Scenario(leecher_count=0, runs=1))
    assert result.rows[0].status == "empty"


def test_identical_experiments_serialize_identically():
    one = [json.dumps(b.to_dict(), sort_keys=True) for b in run_experiment(TINY)]
    two = [json.dumps(b.to_dict(), sort_keys=True) for b in run_experiment(TINY)]
    assert one == two


def test_parallel_matches_serial():
    assert [b.to_dict() for b in run_experiment(TINY, workers=2)] == [
        b.to_dict() for b in run_experiment(TINY)
    ]


def test_stall_becomes_experiment_error():
    with pytest.raises(ExperimentError, match="run 0"):
        run_experiment(replace(TINY, horizon=0.5, runs=1))


def test_default_grid_cardinality():
    cells = SweepGrid().cells()
    assert len(cells) == 48 and len(set(cells)) == 48
    assert cells[0] == (MB, 16 * KB) and cells[-1] == (100 * MB, 2048 * KB)


def test_static_columns_for_100mb_row():
    # the 16 kB row's size columns need no simulation, so zero leechers suffice
    result = sweep(SweepGrid((100 * MB,), (16 * KB, 256 * KB)), Scenario(leecher_count=0, runs=1))
    assert (result.rows[0].metainfo_bytes, result.rows[0].bitfield_bytes) == (128400, 805)
    assert result.rows[1].bitfield_bytes == 55


def test_single_cell_grid():
    result = sweep(SweepGrid((256 * KB,), (32 * KB,)), TINY)
    assert len(result.rows) == 1 and result.rows[0].status == "ok"
    assert result.rows[0].median_completion > 0


def test_invalid_cell_rejected_before_anything_runs():
    calls = []
    with pytest.raises(ConfigError, match="piece=8kB"):
        sweep(SweepGrid((MB,), (32 * KB, 8 * KB)), TINY, progress=lambda s, r: calls.append(s))
    assert calls == []


def test_failed_cell_recorded_and_sweep_continues():
    grid = SweepGrid((256 * KB, 32 * KB), (32 * KB,))
    result = sweep(grid, replace(TINY, horizon=3.0, runs=1))
    statuses = [r.status for r in result.rows]
    assert statuses[0].startswith("error") and statuses[1] == "ok"
    assert "," not in statuses[0]


SMALL_GRID = SweepGrid(tuple(k * 64 * KB for k in range(1, 7)), SweepGrid().piece_sizes)


@pytest.fixture(scope="module")
def small_sweep():
    return sweep(SMALL_GRID, Scenario(leecher_count=3, runs=1))


def test_outputs_one_table_and_two_series_per_cell(small_sweep, tmp_path):
    written = emit_outputs(small_sweep, tmp_path, charts=False)
    names = sorted(p.name for p in written)
    assert len(small_sweep.rows) == 48
    assert names.count("sweep.csv") == 1
    assert len([n for n in names if n.startswith("cdf_")]) == 48
    assert len([n for n in names if n.startswith("util_")]) == 48
    stem = series_stem(64 * KB, 16 * KB)
    assert f"cdf_{stem}.csv" in names and f"util_{stem}.csv" in names
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_HEADER) and len(lines) == 49


def test_rerun_writes_identical_bytes(tmp_path):
    grid = SweepGrid((128 * KB, 256 * KB), (32 * KB, 64 * KB))
    base = replace(TINY, order_mode=OrderMode.RANDOM)
    a, b = tmp_path / "a", tmp_path / "b"
    emit_outputs(sweep(grid, base), a)
    first = {p.name: p.read_bytes() for p in a.iterdir()}
    emit_outputs(sweep(grid, base), a)
    emit_outputs(sweep(grid, base), b)
    assert {p.name: p.read_bytes() for p in a.iterdir()} == first
    assert {p.name: p.read_bytes() for p in b.iterdir()} == first
    assert any(n.endswith(".svg") for n in first)


def test_completion_chart_has_error_bars(tmp_path):
    from swarmsim.charts import completion_points

    grid = SweepGrid((256 * KB,), (16 * KB, 32 * KB, 64 * KB))
    result = sweep(grid, replace(TINY, leecher_count=8, runs=3, order_mode=OrderMode.RANDOM))
    points = completion_points(result, 256 * KB)
    assert [p for p, _, _ in points] == [16 * KB, 32 * KB, 64 * KB]
    assert all(sd >= 0 for _, _, sd in points) and any(sd > 0 for _, _, sd in points)
    emit_outputs(result, tmp_path)
    assert "completion-errorbars" in (tmp_path / "completion_c256k.svg").read_text()


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError, match="not writable"):
        check_writable(blocker / "out")
