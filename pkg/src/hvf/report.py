"""CSV, SVG and markdown output for result tables."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from scipy.stats import binomtest  # noqa: E402

from .harness import ResultRow, ResultTable  # noqa: E402

__all__ = ["CSV_HEADER", "emit_report", "read_csv", "reference_rate", "wilson_interval"]

CSV_HEADER = ("method", "difficulty", "k", "mode", "samples", "horizon",
              "success_rate", "mean_steps", "wall_clock_s")

# reference success rates for the maze task, keyed by
# (method, difficulty, k, mode, samples, horizon); None matches anything
_REFERENCE = [
    (("no_subgoal", "easy", 0, None, 200, 5), 0.93),
    (("no_subgoal", "medium", 0, None, 200, 5), 0.68),
    (("no_subgoal", "hard", 0, None, 200, 5), 0.33),
    (("hvf", "hard", 0, None, 200, 5), 0.33),
    (("hvf", "hard", 1, "max", 200, 5), 0.47),
    (("hvf", "hard", 2, "max", 200, 5), 0.54),
    (("hvf", "hard", 3, "max", 200, 5), 0.39),
    (("hvf", "hard", 5, "max", 200, 5), 0.02),
    (("hvf", "hard", 10, "max", 200, 5), 0.00),
    (("hvf", "hard", 1, "mean", 200, 5), 0.45),
    (("hvf", "hard", 2, "mean", 200, 5), 0.53),
    (("hvf", "hard", 0, None, 1000, 5), 0.35),
    (("hvf", "hard", 1, "max", 1000, 5), 0.54),
    (("hvf", "hard", 2, "max", 1000, 5), 0.55),
    (("hvf", "hard", 0, None, 200, 10), 0.46),
    (("hvf", "hard", 1, "max", 200, 10), 0.55),
    (("hvf", "hard", 2, "max", 200, 10), 0.37),
    (("hvf", "hard", 0, None, 200, 15), 0.31),
    (("hvf", "hard", 1, "max", 200, 15), 0.39),
    (("hvf", "hard", 2, "max", 200, 15), 0.24),
]


def reference_rate(row: ResultRow) -> float | None:
    key = (row.method, row.difficulty, row.k, row.mode, row.samples, row.horizon)
    for ref, value in _REFERENCE:
        if all(r is None or r == x for r, x in zip(ref, key)):
            return value
    return None


def wilson_interval(successes: int, trials: int) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ci = binomtest(successes, trials).proportion_ci(0.95, method="wilson")
    return float(ci.low), float(ci.high)


def _csv_rows(table: ResultTable, include_timing: bool):
    for r in table:
        yield [r.method, r.difficulty, str(r.k), r.mode, str(r.samples), str(r.horizon),
               f"{r.success_rate:.4f}", f"{r.mean_steps:.4f}",
               f"{r.wall_clock_s:.4f}" if include_timing else ""]


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)


def _bar_label(r: ResultRow, sweep: str) -> str:
    if sweep == "benchmark":
        return f"{r.method}\n{r.difficulty}"
    if sweep == "max_vs_mean":
        return f"K={r.k}\n{r.mode}"
    if sweep == "sample_quantity":
        return f"K={r.k}\nD={r.samples}"
    if sweep == "planning_horizon":
        return f"K={r.k}\nH={r.horizon}"
    return f"K={r.k}"


def _plot(rows: list[ResultRow], sweep: str, path: str) -> None:
    fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(rows) + 1.5), 3.2))
    xs = range(len(rows))
    rates = [r.success_rate for r in rows]
    lo_hi = [wilson_interval(r.successes, r.trials) for r in rows]
    err = [[p - lo for p, (lo, _) in zip(rates, lo_hi)], [hi - p for p, (_, hi) in zip(rates, lo_hi)]]
    ax.bar(xs, rates, yerr=err, capsize=3, color="#4c72b0", label="measured")
    refs = [reference_rate(r) for r in rows]
    rx = [x for x, v in zip(xs, refs) if v is not None]
    if rx:
        ax.scatter(rx, [v for v in refs if v is not None], marker="_", s=300, color="#c44e52",
                   zorder=3, label="reference")
        ax.legend(fontsize=7, loc="upper right")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([_bar_label(r, sweep) for r in rows], fontsize=7)
    ax.set_ylim(0, 1)
    ax.set_ylabel("success rate")
    ax.set_title(sweep.replace("_", " "), fontsize=9)
    fig.tight_layout()
    # fixed metadata keeps the SVG bytes stable across runs
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _markdown(table: ResultTable, config_hash: str | None) -> str:
    lines = ["# Results", ""]
    if config_hash:
        lines += [f"config-hash: `{config_hash}`", ""]
    lines += ["| sweep | method | difficulty | K | mode | D | H | success | 95% CI | reference | mean steps | wall clock (s) | complete |",
              "|---|---|---|---|---|---|---|---|---|---|---|---|---|"]
    for r in table:
        lo, hi = wilson_interval(r.successes, r.trials)
        ref = reference_rate(r)
        lines.append(
            f"| {r.sweep} | {r.method} | {r.difficulty} | {r.k} | {r.mode} | {r.samples} | {r.horizon} "
            f"| {r.success_rate:.2f} | [{lo:.2f}, {hi:.2f}] | {'' if ref is None else f'{ref:.2f}'} "
            f"| {r.mean_steps:.1f} | {r.wall_clock_s:.1f} | {'yes' if r.complete else 'NO'} |")
    lines += ["", "Intervals are Wilson score intervals over the trials of each cell.", ""]
    return "\n".join(lines)


def emit_report(table: ResultTable, outdir, *, include_timing: bool = False,
                config_hash: str | None = None) -> list[str]:
    """Write ``results.csv``, one SVG per sweep and ``summary.md``; returns the paths.

    The CSV leaves ``wall_clock_s`` empty unless ``include_timing`` is set, so
    reruns of the same config are byte-identical.
    """
    if not len(table):
        raise ValueError("cannot report an empty result table")
    try:
        os.makedirs(outdir, exist_ok=True)
        paths = [os.path.join(outdir, "results.csv")]
        with open(paths[0], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            w.writerows(_csv_rows(table, include_timing))
        sweeps: dict[str, list[ResultRow]] = {}
        for r in table:
            sweeps.setdefault(r.sweep, []).append(r)
        for sweep, rows in sweeps.items():
            path = os.path.join(outdir, f"{sweep}.svg")
            _plot(rows, sweep, path)
            paths.append(path)
        md = os.path.join(outdir, "summary.md")
        with open(md, "w") as fh:
            fh.write(_markdown(table, config_hash))
        paths.append(md)
    except OSError as exc:
        raise OSError(f"failed writing report to {outdir}: {exc}") from exc
    return paths
