"""Scenario configuration, multi-run experiments, sweeps and file output."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .content import KB, MB, InvalidLayout, TorrentSpec, bitfield_size, metainfo_size, parse_size
from .engine import DEFAULT_HORIZON, LinkModel, SimConfig, SimulationStalled, run
from .metrics import MetricsBundle, aggregate, cdf
from .protocol import ChokeConfig, OrderMode

log = logging.getLogger(__name__)

SWEEP_HEADER = (
    "content_kb",
    "piece_kb",
    "median_completion_s",
    "stddev_completion_s",
    "mid_utilization",
    "duplicate_kb",
    "overhead_fraction",
    "metainfo_bytes",
    "bitfield_bytes",
    "status",
)

DEFAULT_CONTENT_SIZES = tuple(s * MB for s in (1, 5, 10, 20, 50, 100))
DEFAULT_PIECE_SIZES = tuple(s * KB for s in (16, 32, 64, 128, 256, 512, 1024, 2048))


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class CapacityDist:
    """Per-leecher upload capacity distribution, bytes/s."""

    kind: str = "uniform"
    low: float = 20 * KB
    high: float = 200 * KB

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "constant"):
            raise ConfigError(f"unknown capacity distribution {self.kind!r}")
        if self.low <= 0 or self.high < self.low:
            raise ConfigError("capacities must satisfy 0 < low <= high")

    def draw(self, n: int, rng: random.Random) -> list[float]:
        if self.kind == "constant":
            return [float(self.low)] * n
        return [rng.uniform(self.low, self.high) for _ in range(n)]

    def __str__(self) -> str:
        if self.kind == "constant":
            return f"constant {self.low:g}"
        return f"uniform {self.low:g} {self.high:g}"


@dataclass(frozen=True)
class Scenario:
    leecher_count: int = 40
    leecher_caps: CapacityDist = field(default_factory=CapacityDist)
    seed_cap: float = 200 * KB
    upload_slots: int = 4
    rechoke_period: float = 10.0
    optimistic_slot: bool = True
    optimistic_rotation: int = 3
    content_size: int = 5 * MB
    piece_size: int = 256 * KB
    subpiece_size: int = 16 * KB
    pipeline_depth: int = 5
    order_mode: OrderMode = OrderMode.DETERMINISTIC
    link: LinkModel = field(default_factory=LinkModel)
    endgame: bool = False
    rng_seed: int = 1
    runs: int = 5
    peer_set_size: int = 0
    freeze_caps: bool = False
    horizon: float = DEFAULT_HORIZON

    def __post_init__(self) -> None:
        if self.leecher_count < 0:
            raise ConfigError("leecher_count must be >= 0")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.seed_cap <= 0:
            raise ConfigError("seed_cap must be > 0")
        if not 1 <= self.pipeline_depth <= 16:
            raise ConfigError("pipeline_depth must be in [1, 16]")
        try:
            self.torrent()
            self.choke()
        except (InvalidLayout, ValueError) as e:
            raise ConfigError(str(e)) from None

    def torrent(self) -> TorrentSpec:
        return TorrentSpec(self.content_size, self.piece_size, self.subpiece_size)

    def choke(self) -> ChokeConfig:
        return ChokeConfig(
            self.upload_slots, self.rechoke_period, self.optimistic_slot, self.optimistic_rotation
        )

    def run_seed(self, run_index: int) -> int:
        return self.rng_seed + run_index

    def capacities(self, run_index: int = 0) -> list[float]:
        """Leecher capacity vector for one run, drawn from that run's seed."""
        seed = self.rng_seed if self.freeze_caps else self.run_seed(run_index)
        return self.leecher_caps.draw(self.leecher_count, random.Random(seed))

    def sim_config(self, run_index: int = 0) -> SimConfig:
        return SimConfig(
            spec=self.torrent(),
            leecher_caps=self.capacities(run_index),
            seed_cap=self.seed_cap,
            choke=self.choke(),
            link=self.link,
            pipeline_depth=self.pipeline_depth,
            order_mode=self.order_mode,
            endgame=self.endgame,
            peer_set_size=self.peer_set_size,
            horizon=self.horizon,
        )

    def label(self) -> str:
        return f"content={self.content_size // KB}kB piece={self.piece_size // KB}kB"


@dataclass(frozen=True)
class SweepGrid:
    content_sizes: tuple[int, ...] = DEFAULT_CONTENT_SIZES
    piece_sizes: tuple[int, ...] = DEFAULT_PIECE_SIZES

    def __post_init__(self) -> None:
        if not self.content_sizes or not self.piece_sizes:
            raise ConfigError("sweep grid needs at least one content size and one piece size")

    def cells(self) -> list[tuple[int, int]]:
        return [(c, p) for c in self.content_sizes for p in self.piece_sizes]


# ---------------------------------------------------------------------------
# config text


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_rate(v: str) -> float:
    v = v.strip()
    if v.endswith("/s"):
        v = v[:-2]
    return float(parse_size(v))


def _parse_seconds(v: str) -> float:
    v = v.strip().lower()
    if v.endswith("ms"):
        return float(v[:-2]) / 1000.0
    if v.endswith("s"):
        v = v[:-1]
    return float(v)


def _parse_caps(v: str) -> CapacityDist:
    parts = v.replace(",", " ").split()
    if not parts:
        raise ConfigError("empty leecher_caps")
    kind = parts[0].lower()
    if kind == "uniform" and len(parts) == 3:
        return CapacityDist("uniform", _parse_rate(parts[1]), _parse_rate(parts[2]))
    if kind == "constant" and len(parts) == 2:
        cap = _parse_rate(parts[1])
        return CapacityDist("constant", cap, cap)
    raise ConfigError(f"leecher_caps must be 'uniform LOW HIGH' or 'constant CAP', got {v!r}")


def _size_list(v: str) -> tuple[int, ...]:
    return tuple(parse_size(x) for x in v.replace(",", " ").split())


# key -> (Scenario field or link field, parser)
_SCENARIO_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "leecher_count": ("leecher_count", int),
    "leecher_caps": ("leecher_caps", _parse_caps),
    "seed_cap": ("seed_cap", _parse_rate),
    "upload_slots": ("upload_slots", int),
    "choke.upload_slots": ("upload_slots", int),
    "rechoke_period": ("rechoke_period", _parse_seconds),
    "choke.rechoke_period": ("rechoke_period", _parse_seconds),
    "choke.optimistic_slot": ("optimistic_slot", _parse_bool),
    "choke.optimistic_rotation": ("optimistic_rotation", int),
    "content_size": ("content_size", parse_size),
    "piece_size": ("piece_size", parse_size),
    "subpiece_size": ("subpiece_size", parse_size),
    "pipeline_depth": ("pipeline_depth", int),
    "order_mode": ("order_mode", OrderMode),
    "endgame": ("endgame", _parse_bool),
    "rng_seed": ("rng_seed", int),
    "runs": ("runs", int),
    "peer_set_size": ("peer_set_size", int),
    "freeze_caps": ("freeze_caps", _parse_bool),
    "horizon": ("horizon", _parse_seconds),
}

_LINK_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "link.one_way_delay": ("one_way_delay", _parse_seconds),
    "link.tcp_model": ("tcp_model", str.strip),
    "link.ramp_time": ("ramp_time", _parse_seconds),
    "link.floor_fraction": ("floor_fraction", float),
    "link.idle_decay_after": ("idle_decay_after", _parse_seconds),
}

_SWEEP_KEYS = {"sweep.content_sizes": "content_sizes", "sweep.piece_sizes": "piece_sizes"}


def _pairs(text: str) -> list[tuple[int, str, str]]:
    out = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out.append((n, key, value))
    return out


def parse_config(text: str) -> tuple[Scenario, SweepGrid]:
    """Parse flat ``key = value`` text into a scenario and a sweep grid.

    Unknown keys are rejected.  Sizes accept ``kB``/``MB`` suffixes, rates an
    optional ``/s``, durations ``s`` or ``ms``.
    """
    scen: dict[str, object] = {}
    link: dict[str, object] = {}
    grid: dict[str, object] = {}
    for n, key, value in _pairs(text):
        try:
            if key in _SCENARIO_KEYS:
                name, conv = _SCENARIO_KEYS[key]
                scen[name] = conv(value)
            elif key in _LINK_KEYS:
                name, conv = _LINK_KEYS[key]
                link[name] = conv(value)
            elif key in _SWEEP_KEYS:
                grid[_SWEEP_KEYS[key]] = _size_list(value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ConfigError as e:
            raise ConfigError(f"line {n}: {e}") from None
        except ValueError as e:
            raise ConfigError(f"line {n}: bad value for {key}: {e}") from None
    try:
        if link:
            scen["link"] = LinkModel(**link)
        scenario = Scenario(**scen)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return scenario, SweepGrid(**grid)


def parse_scenario(text: str) -> Scenario:
    return parse_config(text)[0]


def load_config(path: str | os.PathLike) -> tuple[Scenario, SweepGrid]:
    return parse_config(Path(path).read_text())


def format_scenario(s: Scenario) -> str:
    """Config text that parses back to ``s``."""
    lk = s.link
    lines = [
        f"leecher_count = {s.leecher_count}",
        f"leecher_caps = {s.leecher_caps}",
        f"seed_cap = {s.seed_cap:g}",
        f"choke.upload_slots = {s.upload_slots}",
        f"choke.rechoke_period = {s.rechoke_period:g}",
        f"choke.optimistic_slot = {str(s.optimistic_slot).lower()}",
        f"choke.optimistic_rotation = {s.optimistic_rotation}",
        f"content_size = {s.content_size}",
        f"piece_size = {s.piece_size}",
        f"subpiece_size = {s.subpiece_size}",
        f"pipeline_depth = {s.pipeline_depth}",
        f"order_mode = {s.order_mode.value}",
        f"link.one_way_delay = {lk.one_way_delay:g}",
        f"link.tcp_model = {lk.tcp_model}",
        f"link.ramp_time = {lk.ramp_time:g}",
        f"link.floor_fraction = {lk.floor_fraction:g}",
        f"link.idle_decay_after = {lk.idle_decay_after:g}",
        f"endgame = {str(s.endgame).lower()}",
        f"rng_seed = {s.rng_seed}",
        f"runs = {s.runs}",
        f"peer_set_size = {s.peer_set_size}",
        f"freeze_caps = {str(s.freeze_caps).lower()}",
        f"horizon = {s.horizon:g}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# running


def _run_one(args: tuple[Scenario, int]) -> MetricsBundle:
    scenario, i = args
    try:
        return run(scenario.sim_config(i), scenario.run_seed(i))
    except SimulationStalled as e:
        raise ExperimentError(f"{scenario.label()} run {i} (seed {scenario.run_seed(i)}): {e}") from e


def _map(fn, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_experiment(scenario: Scenario, workers: int = 1) -> list[MetricsBundle]:
    """All runs of one scenario, run ``i`` seeded with ``rng_seed + i``."""
    return _map(_run_one, [(scenario, i) for i in range(scenario.runs)], workers)


@dataclass
class SweepRow:
    content_size: int
    piece_size: int
    median_completion: float = math.nan
    stddev_completion: float = math.nan
    mid_utilization: float = math.nan
    duplicate_bytes: float = math.nan
    overhead_fraction: float = math.nan
    metainfo_bytes: int = 0
    bitfield_bytes: int = 0
    status: str = "ok"

    def cells(self) -> list[str]:
        def num(x: float, digits: int) -> str:
            return "" if math.isnan(x) else f"{x:.{digits}f}"

        return [
            f"{self.content_size // KB}",
            f"{self.piece_size // KB}",
            num(self.median_completion, 3),
            num(self.stddev_completion, 3),
            num(self.mid_utilization, 4),
            num(self.duplicate_bytes / KB, 1),
            num(self.overhead_fraction, 6),
            str(self.metainfo_bytes),
            str(self.bitfield_bytes),
            self.status,
        ]


@dataclass
class SweepResult:
    rows: list[SweepRow]
    scenarios: list[Scenario]
    bundles: list[list[MetricsBundle]]

    def row(self, content_size: int, piece_size: int) -> SweepRow:
        for r in self.rows:
            if r.content_size == content_size and r.piece_size == piece_size:
                return r
        raise KeyError((content_size, piece_size))

    def best_piece_size(self, content_size: int) -> int:
        rows = [r for r in self.rows if r.content_size == content_size and r.status == "ok"]
        return min(rows, key=lambda r: (r.median_completion, r.piece_size)).piece_size


def summarize(scenario: Scenario, bundles: Sequence[MetricsBundle]) -> SweepRow:
    spec = scenario.torrent()
    row = SweepRow(
        scenario.content_size,
        scenario.piece_size,
        metainfo_bytes=metainfo_size(spec),
        bitfield_bytes=bitfield_size(spec.piece_count),
    )
    if scenario.leecher_count == 0:
        row.status = "empty"
        return row
    agg = aggregate(bundles)
    row.median_completion = agg.median_completion
    row.stddev_completion = agg.stddev_completion
    row.mid_utilization = sum(b.mid_utilization() for b in bundles) / len(bundles)
    row.duplicate_bytes = agg.duplicate_bytes
    row.overhead_fraction = agg.overhead_fraction
    return row


def sweep(
    grid: SweepGrid,
    base: Scenario,
    workers: int = 1,
    progress: Callable[[Scenario, SweepRow], None] | None = None,
) -> SweepResult:
    """Run every (content, piece) cell of ``grid`` on top of ``base``.

    All cells are validated before anything runs.  A run that fails at
    simulation time is recorded in its row's status and the sweep moves on.
    """
    scenarios = []
    for content, piece in grid.cells():
        try:
            scenarios.append(replace(base, content_size=content, piece_size=piece))
        except ConfigError as e:
            raise ConfigError(f"content={content // KB}kB piece={piece // KB}kB: {e}") from None

    rows: list[SweepRow] = []
    all_bundles: list[list[MetricsBundle]] = []
    for s in scenarios:
        try:
            bundles = run_experiment(s, workers)
            row = summarize(s, bundles)
        except (ExperimentError, ArithmeticError, ValueError, RuntimeError) as e:
            log.warning("%s failed: %s", s.label(), e)
            bundles = []
            spec = s.torrent()
            row = SweepRow(
                s.content_size,
                s.piece_size,
                metainfo_bytes=metainfo_size(spec),
                bitfield_bytes=bitfield_size(spec.piece_count),
                status="error: " + str(e).splitlines()[0].replace(",", ";"),
            )
        rows.append(row)
        all_bundles.append(bundles)
        if progress is not None:
            progress(s, row)
    return SweepResult(rows, scenarios, all_bundles)


# ---------------------------------------------------------------------------
# output


def series_stem(content_size: int, piece_size: int) -> str:
    return f"c{content_size // KB}k_p{piece_size // KB}k"


def check_writable(out_dir: str | os.PathLike) -> Path:
    """Create ``out_dir`` if needed and prove a file can be written there."""
    path = Path(out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise ConfigError(f"output directory {str(path)!r} is not writable: {e}") from None
    return path


def sweep_table_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def cdf_csv(bundles: Sequence[MetricsBundle]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("run", "time_s", "fraction"))
    for i, b in enumerate(bundles):
        for t, f in cdf(b.completion_list):
            w.writerow((i, f"{t:.4f}", f"{f:.6f}"))
    for t, f in cdf([t for b in bundles for t in b.completion_list]):
        w.writerow(("pooled", f"{t:.4f}", f"{f:.6f}"))
    return buf.getvalue()


def utilization_csv(bundles: Sequence[MetricsBundle], window: float = 5.0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("run", "window_start_s", "utilization"))
    for i, b in enumerate(bundles):
        for k, u in enumerate(b.utilization):
            w.writerow((i, f"{k * window:g}", f"{u:.6f}"))
    return buf.getvalue()


def emit_outputs(
    result: SweepResult, out_dir: str | os.PathLike, charts: bool = True
) -> list[Path]:
    """Write the sweep table, per-cell series and charts; returns the paths."""
    path = check_writable(out_dir)
    written = []

    def put(name: str, text: str) -> None:
        p = path / name
        p.write_text(text)
        written.append(p)

    put("sweep.csv", sweep_table_csv(result.rows))
    for s, bundles in zip(result.scenarios, result.bundles):
        stem = series_stem(s.content_size, s.piece_size)
        put(f"cdf_{stem}.csv", cdf_csv(bundles))
        put(f"util_{stem}.csv", utilization_csv(bundles))
    if charts:
        from . import charts as ch

        written.extend(ch.write_charts(result, path))
    return written
