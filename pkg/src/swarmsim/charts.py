"""Static SVG charts for sweep results.

One set per content size: completion time vs piece size with error bars,
completion CDFs, utilization scatter, seed unique/total uploads, metainfo
size and control overhead.  Output is byte-stable for identical input.
"""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .content import KB, MB  # noqa: E402
from .metrics import cdf  # noqa: E402

if TYPE_CHECKING:
    from .harness import SweepResult

plt.rcParams["svg.hashsalt"] = "swarmsim"
plt.rcParams["svg.fonttype"] = "none"

_META = {"Date": None, "Creator": None}


def _label(size: int) -> str:
    return f"{size // MB} MB" if size >= MB and size % MB == 0 else f"{size // KB} kB"


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def _cells(result: SweepResult, content: int):
    out = []
    for s, row, bundles in zip(result.scenarios, result.rows, result.bundles):
        if s.content_size == content and row.status == "ok" and bundles:
            out.append((s, row, bundles))
    return out


def _pick_two(cells):
    """The 16 kB and 512 kB cells when present, else the extremes."""
    by = {s.piece_size: (s, r, b) for s, r, b in cells}
    if 16 * KB in by and 512 * KB in by:
        return [by[16 * KB], by[512 * KB]]
    sizes = sorted(by)
    return [by[sizes[0]], by[sizes[-1]]] if len(sizes) > 1 else [by[sizes[0]]]


def completion_points(result: SweepResult, content: int) -> list[tuple[int, float, float]]:
    """(piece size, median, stddev) per successful cell, in grid order."""
    return [(s.piece_size, r.median_completion, r.stddev_completion) for s, r, _ in _cells(result, content)]


def write_charts(result: SweepResult, out_dir: Path) -> list[Path]:
    written: list[Path] = []
    contents = sorted({s.content_size for s in result.scenarios})
    for content in contents:
        cells = _cells(result, content)
        if not cells:
            continue
        tag = f"c{content // KB}k"
        xs = [s.piece_size // KB for s, _, _ in cells]
        labels = [_label(s.piece_size) for s, _, _ in cells]

        points = completion_points(result, content)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.errorbar(
            range(len(points)),
            [m for _, m, _ in points],
            yerr=[sd for _, _, sd in points],
            marker="o",
            capsize=3,
            gid="completion-errorbars",
        )
        ax.set_xticks(range(len(xs)), labels, rotation=45)
        ax.set_xlabel("piece size")
        ax.set_ylabel("median completion time (s)")
        ax.set_title(f"Completion time, {_label(content)} content")
        written.append(_save(fig, out_dir / f"completion_{tag}.svg"))

        pair = _pick_two(cells)
        fig, axes = plt.subplots(2, len(pair), figsize=(4.5 * len(pair), 6), squeeze=False)
        for col, (s, _, bundles) in enumerate(pair):
            ax = axes[0][col]
            pts = cdf([t for b in bundles for t in b.completion_list])
            ax.step([t for t, _ in pts], [f for _, f in pts], where="post")
            ax.set_xlabel("completion time (s)")
            ax.set_ylabel("fraction of leechers")
            ax.set_title(f"CDF, {_label(s.piece_size)} pieces")
            ax = axes[1][col]
            for b in bundles:
                ax.plot(
                    [5.0 * k for k in range(len(b.utilization))],
                    b.utilization,
                    ".",
                    markersize=3,
                    color="tab:blue",
                )
            ax.set_ylim(0, 1.05)
            ax.set_xlabel("time (s)")
            ax.set_ylabel("upload utilization")
        written.append(_save(fig, out_dir / f"cdf_util_{tag}.svg"))

        fig, axes = plt.subplots(1, len(pair), figsize=(4.5 * len(pair), 3.5), squeeze=False)
        for col, (s, _, bundles) in enumerate(pair):
            ax = axes[0][col]
            d = bundles[0].seed_duplicates()
            ax.step([t for t, _ in d.total_series], [n for _, n in d.total_series], where="post", label="Total")
            ax.step([t for t, _ in d.unique_series], [n for _, n in d.unique_series], where="post", label="Unique")
            if d.first_copy_time is not None:
                ax.axvline(d.first_copy_time, color="gray", linestyle="--", linewidth=1)
            ax.set_xlabel("time (s)")
            ax.set_ylabel("pieces uploaded by seed")
            ax.set_title(f"{_label(s.piece_size)} pieces, run 0")
            ax.legend(loc="upper left")
        written.append(_save(fig, out_dir / f"seed_uploads_{tag}.svg"))

        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(range(len(xs)), [r.metainfo_bytes / KB for _, r, _ in cells], marker="o")
        ax.set_xticks(range(len(xs)), labels, rotation=45)
        ax.set_xlabel("piece size")
        ax.set_ylabel("metainfo size (kB)")
        written.append(_save(fig, out_dir / f"metainfo_{tag}.svg"))

        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(range(len(xs)), [100 * r.overhead_fraction for _, r, _ in cells], marker="o")
        ax.set_xticks(range(len(xs)), labels, rotation=45)
        ax.set_xlabel("piece size")
        ax.set_ylabel("bitfield + have overhead (%)")
        written.append(_save(fig, out_dir / f"overhead_{tag}.svg"))
    return written
