"""Read-only aggregation of run directories into per-method summary tables."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from firereinit.runner import MetricRecord, read_records

SUMMARY_METRICS = ("final_accuracy", "max_drop", "post_reset_dfi", "reset_sfe")


@dataclass
class RunSummary:
    run_id: str
    method: str
    seed: int
    final_accuracy: float
    max_drop: float
    post_reset_dfi: float
    reset_sfe: float


def summarize_run(records: list[MetricRecord]) -> RunSummary:
    """Collapse one run's records into the four headline numbers.

    ``max_drop`` is the largest ``pre_reset_accuracy - accuracy`` over the
    epoch-0 test records of chunks after the first (0 with a single chunk).
    ``post_reset_dfi`` and ``reset_sfe`` average those same records; a
    single-chunk run falls back to its last test record.
    """
    test = [r for r in records if r.split == "test"]
    if not test:
        raise ValueError("run has no test records")
    last = max(test, key=lambda r: (r.chunk, r.epoch))
    events = [r for r in test if r.epoch == 0 and r.chunk > 0]
    drops = [r.pre_reset_accuracy - r.accuracy for r in events if r.pre_reset_accuracy is not None]
    basis = events or [last]
    return RunSummary(
        run_id=last.run_id,
        method=last.method,
        seed=last.seed,
        final_accuracy=last.accuracy,
        max_drop=max(drops) if drops else 0.0,
        post_reset_dfi=float(np.mean([r.dfi_mean for r in basis])),
        reset_sfe=float(np.mean([r.sfe_reinit for r in basis])),
    )


def collect_runs(root) -> list[RunSummary]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"no such run directory: {root}")
    files = sorted(root.rglob("metrics.csv"))
    if not files:
        raise ValueError(f"no metrics.csv found under {root}")
    out = []
    for f in files:
        recs = read_records(f)
        if recs:
            out.append(summarize_run(recs))
    if not out:
        raise ValueError(f"every metrics.csv under {root} is empty")
    return out


@dataclass
class MethodSummary:
    method: str
    seeds: int
    stats: dict  # metric -> (mean, std)


def summarize(runs: list[RunSummary]) -> list[MethodSummary]:
    """Mean and population std (0 for one seed) per method, methods sorted by name."""
    groups: dict[str, list[RunSummary]] = defaultdict(list)
    for r in runs:
        groups[r.method].append(r)
    out = []
    for method in sorted(groups):
        rs = groups[method]
        stats = {}
        for m in SUMMARY_METRICS:
            vals = np.array([getattr(r, m) for r in rs], dtype=np.float64)
            stats[m] = (float(vals.mean()), float(vals.std()))
        out.append(MethodSummary(method, len(rs), stats))
    return out


def write_summary_csv(summaries: list[MethodSummary], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "seeds"] + [f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "std")])
        for s in summaries:
            row = [s.method, s.seeds]
            for m in SUMMARY_METRICS:
                row += [repr(s.stats[m][0]), repr(s.stats[m][1])]
            w.writerow(row)


def format_table(summaries: list[MethodSummary]) -> str:
    header = ["method", "seeds", *SUMMARY_METRICS]
    rows = []
    for s in summaries:
        cells = [s.method, str(s.seeds)]
        for m in SUMMARY_METRICS:
            mean, std = s.stats[m]
            cells.append(f"{_num(mean)} ± {_num(std)}")
        rows.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines)


def _num(x: float) -> str:
    if x == 0 or (1e-3 <= abs(x) < 1e4):
        return f"{x:.4f}"
    if math.isfinite(x):
        return f"{x:.3e}"
    return str(x)


def report(root) -> tuple[list[MethodSummary], str]:
    """Summarize every run under ``root``; writes ``summary.csv`` and ``summary.txt`` there."""
    summaries = summarize(collect_runs(root))
    text = format_table(summaries)
    root = Path(root)
    write_summary_csv(summaries, root / "summary.csv")
    (root / "summary.txt").write_text(text + "\n", encoding="utf-8")
    return summaries, text
