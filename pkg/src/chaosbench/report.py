"""Report emission: aggregation tables, plot-ready CSV, and rendered figures.

The ``report`` CLI path writes three artifact kinds next to each other:
a summary table (CSV or Markdown), a long-format per-horizon sMAPE curve CSV
for external tooling, and PNG figures of the same quantities rendered with
matplotlib for quick inspection.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import InvalidArgumentError
from .experiments import ResultRecord, aggregate

__all__ = [
    "median_smape_curves",
    "write_summary_table",
    "write_smape_curves_csv",
    "render_figures",
    "emit_report",
]


def _group_label(key_values: Sequence) -> str:
    return "/".join(str(v) for v in key_values)


def _group_of(rec: ResultRecord, group_keys: Sequence[str]):
    out = []
    for key in group_keys:
        if hasattr(rec, key) and key != "kind_params":
            out.append(getattr(rec, key))
        else:
            out.append(rec.kind_params.get(key))
    return tuple(out)


def median_smape_curves(
    records: Iterable[ResultRecord], group_keys: Sequence[str]
) -> dict[tuple, np.ndarray]:
    """Median per-horizon sMAPE curve for each group (failed records skipped)."""
    curves: dict[tuple, list] = {}
    for rec in records:
        if rec.failed or not rec.metrics.smape_curve:
            continue
        curves.setdefault(_group_of(rec, group_keys), []).append(rec.metrics.smape_curve)
    out = {}
    for key, rows in curves.items():
        h = min(len(r) for r in rows)
        out[key] = np.median(np.asarray([r[:h] for r in rows]), axis=0)
    return out


def write_summary_table(rows: list[dict], path: Path, fmt: str = "csv"):
    cols: list[str] = []
    for row in rows:
        for col in row:
            if col not in cols:
                cols.append(col)

    def fmt_cell(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    with open(path, "w", encoding="utf-8") as fh:
        if fmt == "csv":
            fh.write(",".join(cols) + "\n")
            for row in rows:
                fh.write(",".join(fmt_cell(row.get(c)) for c in cols) + "\n")
        elif fmt == "md":
            fh.write("| " + " | ".join(cols) + " |\n")
            fh.write("|" + "|".join("---" for _ in cols) + "|\n")
            for row in rows:
                fh.write("| " + " | ".join(fmt_cell(row.get(c)) for c in cols) + " |\n")
        else:
            raise InvalidArgumentError(f"unknown table format {fmt!r}")


def write_smape_curves_csv(
    curves: dict[tuple, np.ndarray],
    group_keys: Sequence[str],
    path: Path,
    dt_lyap: float,
):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(group_keys) + ",horizon_step,t_lyap,smape_median\n")
        for key, curve in sorted(curves.items(), key=lambda kv: tuple(map(str, kv[0]))):
            label = ",".join(str(v) for v in key)
            for step, value in enumerate(curve, start=1):
                fh.write(f"{label},{step},{step * dt_lyap:.6g},{value:.8g}\n")


def render_figures(
    rows: list[dict],
    curves: dict[tuple, np.ndarray],
    group_keys: Sequence[str],
    out_dir: Path,
    dt_lyap: float,
) -> list[Path]:
    """Render the sMAPE-curve and VPT-summary figures; returns written paths."""
    written = []

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, curve in sorted(curves.items(), key=lambda kv: tuple(map(str, kv[0]))):
        t = dt_lyap * np.arange(1, len(curve) + 1)
        ax.plot(t, curve, label=_group_label(key), lw=1.5)
    ax.set_xlabel("forecast horizon (Lyapunov times)")
    ax.set_ylabel("median sMAPE")
    ax.set_ylim(0, 200)
    ax.legend(fontsize=8, frameon=False)
    ax.set_title("Per-horizon forecast error")
    fig.tight_layout()
    path = out_dir / "smape_curves.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    metric = (
        "vpt_sustained_lyap"
        if any("vpt_sustained_lyap_median" in r for r in rows)
        else "vpt_lyap"
    )
    vpt_rows = [r for r in rows if f"{metric}_median" in r]
    if vpt_rows:
        fig, ax = plt.subplots(figsize=(7, 4.0))
        labels = [_group_label([r.get(k) for k in group_keys]) for r in vpt_rows]
        medians = [r[f"{metric}_median"] for r in vpt_rows]
        errors = [r.get(f"{metric}_se", 0.0) for r in vpt_rows]
        pos = np.arange(len(labels))
        ax.bar(pos, medians, yerr=errors, capsize=3, color="#4878a8")
        ax.set_xticks(pos)
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        ax.set_ylabel("median VPT (Lyapunov times)")
        ax.set_title("Valid prediction time by group")
        fig.tight_layout()
        path = out_dir / "vpt_summary.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    return written


def emit_report(
    records: list[ResultRecord],
    group_keys: Sequence[str],
    out_dir,
    fmt: str = "csv",
    figures: bool = True,
    dt_lyap: float = 1.0 / 30.0,
) -> dict:
    """Aggregate records and write the table, curve CSV, and figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = aggregate(records, group_keys)
    table_path = out_dir / ("summary.md" if fmt == "md" else "summary.csv")
    write_summary_table(rows, table_path, fmt)
    curves = median_smape_curves(records, group_keys)
    curves_path = out_dir / "smape_curves.csv"
    write_smape_curves_csv(curves, group_keys, curves_path, dt_lyap)
    artifacts = {"table": table_path, "curves": curves_path, "figures": []}
    if figures:
        artifacts["figures"] = render_figures(rows, curves, group_keys, out_dir, dt_lyap)
    return artifacts
