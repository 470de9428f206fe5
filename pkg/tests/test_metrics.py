import math

import pytest
from hypothesis import given, strategies as st

from swarmsim.content import KB, MB, TorrentSpec
from swarmsim.engine import LinkModel, SimConfig, run
from swarmsim.metrics import (
    MetricsError,
    PeerTraffic,
    UploadLog,
    cdf,
    completion_stats,
    control_overhead,
    edge_utilization,
    mid_utilization,
    seed_duplicates,
    utilization_series,
)
from swarmsim.protocol import OrderMode


# -- utilization ----------------------------------------------------------------


def test_two_leechers_sixty_percent():
    log = UploadLog()
    log.add_bytes(1, 1.0, 300 * KB)
    log.add_bytes(2, 2.0, 300 * KB)
    s = utilization_series(log, {1: 100 * KB, 2: 100 * KB}, {1: 5.0, 2: 5.0})
    assert s == [pytest.approx(0.6)]


def test_window_without_uploads_is_zero():
    log = UploadLog()
    log.add_bytes(1, 7.0, 100 * KB)
    s = utilization_series(log, {1: 100 * KB}, {1: 10.0})
    assert s[0] == 0.0 and s[1] == pytest.approx(0.2)


def test_mid_window_departure_prorates_capacity():
    # peer 2 leaves at 2.5 s; hand integration: 100*5 + 100*2.5 = 750 kB of capacity
    log = UploadLog()
    log.add(1, 0.0, 5.0, 50 * KB)
    log.add(2, 0.0, 2.5, 40 * KB)
    s = utilization_series(log, {1: 100 * KB, 2: 100 * KB}, {1: 5.0, 2: 2.5})
    assert s == [pytest.approx(350 / 750)]


def test_rate_segments_split_across_windows():
    log = UploadLog(window=5.0)
    log.add(3, 4.0, 11.0, 10.0)
    assert log.bins[3] == pytest.approx([10.0, 50.0, 10.0])
    assert log.total(3) == pytest.approx(70.0)


def test_series_ends_when_everyone_left():
    assert utilization_series(UploadLog(), {1: 1.0}, {1: 0.0}) == []


def test_window_mismatch_rejected():
    with pytest.raises(MetricsError):
        utilization_series(UploadLog(5.0), {1: 1.0}, {1: 3.0}, window=1.0)


def test_phase_means():
    series = [0.0] * 10 + [1.0] * 30 + [0.0] * 10
    assert edge_utilization(series) == (0.0, 0.0)
    assert mid_utilization(series) == pytest.approx(1.0)
    assert mid_utilization([]) == 0.0


def test_single_saturating_leecher_interior_windows():
    # A lone leecher never uploads, so two leechers fed by a fast seed in
    # random order always hold something the other lacks and run at cap.
    cfg = SimConfig(
        TorrentSpec(4 * MB, 64 * KB), [100 * KB, 100 * KB], seed_cap=400 * KB,
        link=LinkModel(0.0), order_mode=OrderMode.RANDOM,
    )
    b = run(cfg, 1)
    assert all(0.0 <= u <= 1.0 + 1e-9 for u in b.utilization)
    assert b.utilization[1:-1] == [pytest.approx(1.0, abs=1e-9)] * (len(b.utilization) - 2)


# -- completion stats -------------------------------------------------------------


def test_median_examples():
    assert completion_stats([[1, 2, 3]]).median_completion == 2
    agg = completion_stats([[10]] * 5)
    assert agg.median_completion == 10 and agg.stddev_completion == 0
    agg = completion_stats([[8], [12]])
    assert agg.median_completion == 10 and agg.stddev_completion == pytest.approx(2.0)


def test_empty_completion_input():
    with pytest.raises(MetricsError):
        completion_stats([])


@given(st.lists(st.lists(st.floats(0.1, 1e4), min_size=1, max_size=20), min_size=1, max_size=6))
def test_cdf_shape(runs):
    agg = completion_stats(runs)
    pts = agg.cdf_points
    assert all(a[0] <= b[0] and a[1] < b[1] for a, b in zip(pts, pts[1:]))
    assert pts[-1][1] == 1.0
    assert all(c[-1][1] == 1.0 for c in agg.per_run_cdfs)
    # at the maximum completion time the pooled fraction is exactly one
    top = max(t for r in runs for t in r)
    assert max(f for t, f in cdf(t for r in runs for t in r) if t <= top) == 1.0


# -- seed duplicates ----------------------------------------------------------------------


def test_seed_duplicates_example():
    log = [(1.0, 0, True), (2.0, 1, True), (3.0, 0, False), (4.0, 2, True)]
    d = seed_duplicates(log, 16 * KB, piece_count=3)
    assert d.unique_series[-1][1] == 3 and d.total_series[-1][1] == 4
    assert d.duplicate_bytes == 16 * KB
    assert d.first_copy_time == 4.0


def test_no_duplicates():
    d = seed_duplicates([(0.5, 0, True), (0.9, 1, True)], 16 * KB, piece_count=4)
    assert d.duplicate_bytes == 0 and d.unique_series == [(0.5, 1), (0.9, 2)]
    assert d.total_series == [(0.5, 1), (0.9, 2)] and d.first_copy_time is None


def test_short_last_piece_duplicate_counted_exactly():
    d = seed_duplicates([(0, 2, True), (1, 2, False)], {2: 5 * KB})
    assert d.duplicate_bytes == 5 * KB


def test_seed_series_invariants_from_run():
    cfg = SimConfig(TorrentSpec(1 * MB, 32 * KB), [50 * KB, 120 * KB, 80 * KB, 30 * KB])
    b = run(cfg, 2)
    d = b.seed_duplicates()
    for (tu, u), (tt, t) in zip(d.unique_series, d.total_series):
        assert tu == tt and u <= t <= len(d.total_series) and u <= b.piece_count
    assert [u for _, u in d.unique_series] == sorted(u for _, u in d.unique_series)


# -- overhead -----------------------------------------------------------------------------


def test_overhead_example():
    t = PeerTraffic(bitfield_bytes=805, have_bytes=90, payload_bytes=9000, data_header_bytes=105)
    assert control_overhead([t]) == pytest.approx(0.0895)


def test_other_control_excluded():
    t = PeerTraffic(other_control_bytes=5000, payload_bytes=1000)
    assert control_overhead([t]) == 0.0


def test_zero_total_is_an_error():
    with pytest.raises(MetricsError):
        control_overhead([PeerTraffic()])


@pytest.mark.parametrize("piece", [16 * KB, 64 * KB, 256 * KB])
def test_overhead_decreases_when_piece_size_doubles(piece):
    caps = [60 * KB, 150 * KB, 90 * KB, 40 * KB, 200 * KB]
    small = run(SimConfig(TorrentSpec(2 * MB, piece), caps), 3).overhead_fraction()
    big = run(SimConfig(TorrentSpec(2 * MB, 2 * piece), caps), 3).overhead_fraction()
    assert big < small


def test_upload_download_symmetry():
    cfg = SimConfig(TorrentSpec(1 * MB, 64 * KB), [70 * KB, 20 * KB, 190 * KB], link=LinkModel(0.02))
    b = run(cfg, 9)
    uploaded = sum(t.payload_bytes for t in b.traffic.values())
    assert uploaded == b.delivered_bytes + b.duplicate_bytes_received + b.dropped_bytes
    assert all(v >= 0 for t in b.traffic.values() for v in vars(t).values())
    assert math.isclose(b.delivered_bytes, 3 * MB)
