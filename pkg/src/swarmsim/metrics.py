"""Reductions from raw run observations to the piece-size study's figures."""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

UTIL_WINDOW = 5.0


class MetricsError(ValueError):
    pass


class UploadLog:
    """Bytes uploaded per peer, binned into fixed windows as flows progress.

    The engine reports piecewise-constant rate segments; each segment is
    split exactly across window boundaries.
    """

    def __init__(self, window: float = UTIL_WINDOW):
        if window <= 0:
            raise ValueError("window must be positive")
        self.window = window
        self.bins: dict[int, list[float]] = {}

    def add(self, peer: int, t0: float, t1: float, rate: float) -> None:
        if t1 <= t0 or rate <= 0.0:
            return
        w = self.window
        bins = self.bins.get(peer)
        if bins is None:
            bins = self.bins[peer] = []
        i = int(t0 // w)
        last = int(t1 // w)
        if len(bins) <= last:
            bins.extend([0.0] * (last + 1 - len(bins)))
        if i == last:
            bins[i] += rate * (t1 - t0)
            return
        bins[i] += rate * ((i + 1) * w - t0)
        for j in range(i + 1, last):
            bins[j] += rate * w
        bins[last] += rate * (t1 - last * w)

    def add_bytes(self, peer: int, t: float, nbytes: float) -> None:
        """Point deposit, used when building logs by hand."""
        bins = self.bins.setdefault(peer, [])
        i = int(t // self.window)
        if len(bins) <= i:
            bins.extend([0.0] * (i + 1 - len(bins)))
        bins[i] += nbytes

    def total(self, peer: int) -> float:
        return sum(self.bins.get(peer, ()))


def utilization_series(
    upload_log: UploadLog,
    leecher_caps: Mapping[int, float],
    departure_times: Mapping[int, float | None],
    window: float = UTIL_WINDOW,
) -> list[float]:
    """Torrent-wide leecher upload utilization per window.

    Each window's value is the bytes leechers uploaded in it over the upload
    capacity of the leechers still connected, with a leecher that leaves
    mid-window contributing capacity only for the time it was there.  The
    seed appears in neither sum.  The series stops at the first window with
    no connected leecher.
    """
    if not math.isclose(window, upload_log.window):
        raise MetricsError(f"log binned at {upload_log.window}s, asked for {window}s")
    series: list[float] = []
    leechers = sorted(leecher_caps)
    i = 0
    while True:
        t0, t1 = i * window, (i + 1) * window
        denom = 0.0
        for peer in leechers:
            dep = departure_times.get(peer)
            end = t1 if dep is None else min(t1, dep)
            if end > t0:
                denom += leecher_caps[peer] * (end - t0)
        if denom <= 0.0:
            return series
        num = 0.0
        for peer in leechers:
            bins = upload_log.bins.get(peer)
            if bins is not None and i < len(bins):
                num += bins[i]
        series.append(num / denom)
        i += 1


def phase_mean(series: Sequence[float], start: float, stop: float) -> float:
    """Mean of the windows whose index falls in ``[start, stop)`` of the run."""
    n = len(series)
    if not n:
        return 0.0
    lo = int(math.floor(start * n))
    hi = max(lo + 1, int(math.ceil(stop * n)))
    chunk = series[lo:hi]
    return sum(chunk) / len(chunk)


def mid_utilization(series: Sequence[float]) -> float:
    return phase_mean(series, 0.2, 0.8)


def edge_utilization(series: Sequence[float], fraction: float = 0.1) -> tuple[float, float]:
    """Mean utilization over the first and last ``fraction`` of windows."""
    n = len(series)
    if not n:
        return 0.0, 0.0
    k = max(1, int(math.ceil(fraction * n)))
    return sum(series[:k]) / k, sum(series[-k:]) / k


def median(values: Sequence[float]) -> float:
    if not values:
        raise MetricsError("median of an empty sequence")
    return float(statistics.median(values))


@dataclass
class RunAggregate:
    median_completion: float
    stddev_completion: float
    cdf_points: list[tuple[float, float]]
    per_run_medians: list[float]
    per_run_cdfs: list[list[tuple[float, float]]] = field(default_factory=list)
    duplicate_bytes: float = 0.0
    overhead_fraction: float = 0.0


def cdf(times: Iterable[float]) -> list[tuple[float, float]]:
    xs = sorted(times)
    n = len(xs)
    return [(t, (i + 1) / n) for i, t in enumerate(xs)]


def completion_stats(runs: Sequence[Sequence[float]]) -> RunAggregate:
    """Median and spread of completion time across runs.

    The headline median is the median of the per-run medians, and the
    standard deviation (population form) is taken over those same per-run
    medians, so it reads as an error bar on the headline value.
    """
    if not runs:
        raise MetricsError("completion_stats needs at least one run")
    meds = [median(r) for r in runs if len(r)]
    if not meds:
        raise MetricsError("no completion times in any run")
    pooled = [t for r in runs for t in r]
    return RunAggregate(
        median_completion=median(meds),
        stddev_completion=statistics.pstdev(meds),
        cdf_points=cdf(pooled),
        per_run_medians=meds,
        per_run_cdfs=[cdf(r) for r in runs if len(r)],
    )


@dataclass
class SeedDuplicates:
    unique_series: list[tuple[float, int]]
    total_series: list[tuple[float, int]]
    duplicate_bytes: int
    first_copy_time: float | None


def seed_duplicates(
    seed_piece_log: Sequence[tuple[float, int, bool]],
    piece_length: Mapping[int, int] | int,
    piece_count: int | None = None,
) -> SeedDuplicates:
    """Unique vs. total pieces the seed has uploaded over time.

    ``seed_piece_log`` holds ``(time, piece, was_first_copy)`` entries; a
    ``piece_length`` int means all pieces share that length.  The first-copy
    time is when the unique count reaches ``piece_count`` (``None`` if it
    never does or no count was given).
    """

    def length(p: int) -> int:
        return piece_length if isinstance(piece_length, int) else piece_length[p]

    unique = total = 0
    dup = 0
    useries: list[tuple[float, int]] = []
    tseries: list[tuple[float, int]] = []
    first_copy = None
    for t, p, first in seed_piece_log:
        total += 1
        if first:
            unique += 1
            if piece_count is not None and unique == piece_count:
                first_copy = t
        else:
            dup += length(p)
        useries.append((t, unique))
        tseries.append((t, total))
    return SeedDuplicates(useries, tseries, dup, first_copy)


@dataclass
class PeerTraffic:
    bitfield_bytes: int = 0
    have_bytes: int = 0
    other_control_bytes: int = 0
    payload_bytes: int = 0
    data_header_bytes: int = 0

    @property
    def control_overhead_bytes(self) -> int:
        return self.bitfield_bytes + self.have_bytes


def control_overhead(traffic: Iterable[PeerTraffic]) -> float:
    """Bitfield+have bytes as a fraction of all bytes sent, pooled over peers.

    Requests, chokes and interest messages are tracked separately and kept
    out of both sides of the ratio.
    """
    control = total = 0
    for t in traffic:
        ctl = t.bitfield_bytes + t.have_bytes
        control += ctl
        total += ctl + t.payload_bytes + t.data_header_bytes
    if total <= 0:
        raise MetricsError("no traffic to compute overhead over")
    return control / total


@dataclass
class MetricsBundle:
    """Everything collected from one simulation run."""

    content_size: int
    piece_size: int
    leecher_caps: dict[int, float]
    completion_times: dict[int, float]
    departure_times: dict[int, float]
    utilization: list[float]
    seed_piece_log: list[tuple[float, int, bool]]
    traffic: dict[int, PeerTraffic]
    delivered_bytes: int
    duplicate_bytes_received: int
    dropped_deliveries: int
    max_outstanding: int
    span_violations: int
    all_complete: bool
    end_time: float
    events_processed: int
    piece_lengths: dict[int, int] = field(default_factory=dict)
    seed_ids: list[int] = field(default_factory=list)
    dropped_bytes: int = 0

    @property
    def completion_list(self) -> list[float]:
        return [self.completion_times[k] for k in sorted(self.completion_times)]

    @property
    def piece_count(self) -> int:
        return -(-self.content_size // self.piece_size)

    def seed_duplicates(self) -> SeedDuplicates:
        def length(p: int) -> int:
            if p == self.piece_count - 1:
                return self.content_size - p * self.piece_size
            return self.piece_size

        lengths = {p: length(p) for _, p, _ in self.seed_piece_log}
        return seed_duplicates(self.seed_piece_log, lengths, self.piece_count)

    def overhead_fraction(self) -> float:
        return control_overhead(self.traffic.values())

    def mid_utilization(self) -> float:
        return mid_utilization(self.utilization)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["traffic"] = {str(k): asdict(v) for k, v in sorted(self.traffic.items())}
        for key in ("leecher_caps", "completion_times", "departure_times", "piece_lengths"):
            d[key] = {str(k): v for k, v in sorted(d[key].items())}
        d["seed_piece_log"] = [list(e) for e in self.seed_piece_log]
        return d


def aggregate(bundles: Sequence[MetricsBundle]) -> RunAggregate:
    agg = completion_stats([b.completion_list for b in bundles])
    agg.duplicate_bytes = sum(b.seed_duplicates().duplicate_bytes for b in bundles) / len(bundles)
    agg.overhead_fraction = sum(b.overhead_fraction() for b in bundles) / len(bundles)
    return agg
