"""Merging run artifacts into significance tables and box-plot data.

Reads the per-run comparisons and metrics files written by the suite
runner, deduplicates shared comparison rows, and renders one combined
CSV, an aligned text table, and per-metric quantile files suitable for
external box plotting.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from synbench.evaluation import COMPARISONS_HEADER, EvaluationError, parse_metrics_csv


class ReportError(ValueError):
    """No usable run artifacts under the given directory."""


def find_manifests(runs_root: str | Path) -> list[Path]:
    """All manifest.json files under a suite output directory."""
    runs_root = Path(runs_root)
    candidates = sorted(runs_root.glob("runs/*/manifest.json"))
    if not candidates:
        candidates = sorted(runs_root.glob("*/manifest.json"))
    if not candidates:
        raise ReportError(f"no run manifests found under {runs_root}")
    return candidates


def merge_comparison_rows(manifests: Sequence[Path]) -> list[dict[str, str]]:
    """Union of every run's comparison rows, deduplicated and sorted."""
    seen = set()
    rows = []
    for manifest_path in manifests:
        comp_path = manifest_path.parent / "comparisons.csv"
        if not comp_path.exists():
            continue
        with open(comp_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != COMPARISONS_HEADER:
                raise ReportError(f"{comp_path}: unexpected header {reader.fieldnames}")
            for row in reader:
                key = tuple(row[k] for k in COMPARISONS_HEADER)
                if key not in seen:
                    seen.add(key)
                    rows.append(dict(row))
    rows.sort(
        key=lambda r: (r["metric"], r["model_a"], r["model_b"], r["region"] == "All", r["region"])
    )
    return rows


def rows_to_csv(rows: Sequence[dict[str, str]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COMPARISONS_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _fmt_cell(text: str, width: int) -> str:
    return text.ljust(width)


def render_text_table(rows: Sequence[dict[str, str]]) -> str:
    """Fixed-width rendering of comparison rows for terminals and reports."""
    columns = COMPARISONS_HEADER
    display_rows = []
    for row in rows:
        shown = dict(row)
        for key in ("p_value", "median_a", "median_b", "pct_better"):
            if shown[key] not in ("", "NA"):
                value = float(shown[key])
                shown[key] = f"{value:.3g}" if key == "p_value" else f"{value:.4f}"
        display_rows.append(shown)
    widths = {
        col: max(len(col), *(len(r[col]) for r in display_rows)) if display_rows else len(col)
        for col in columns
    }
    lines = [
        "  ".join(_fmt_cell(col, widths[col]) for col in columns),
        "  ".join("-" * widths[col] for col in columns),
    ]
    for row in display_rows:
        lines.append("  ".join(_fmt_cell(row[col], widths[col]) for col in columns))
    return "\n".join(lines) + "\n"


BOXPLOT_HEADER = ["region", "model_id", "min", "q25", "median", "q75", "max", "n"]


def boxplot_rows(manifests: Sequence[Path], metric: str) -> list[list[str]]:
    """Per (region, model) five-number summaries of one metric's site values."""
    groups: dict[tuple[str, str], list[float]] = {}
    for manifest_path in manifests:
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("status") != "ok":
            continue
        metrics_path = manifest_path.parent / "metrics.csv"
        for region, model_id, m in parse_metrics_csv(metrics_path.read_text()):
            value = m.value(metric)
            if math.isfinite(value):
                groups.setdefault((region, model_id), []).append(value)
    rows = []
    for (region, model_id), values in sorted(groups.items()):
        q = np.quantile(np.array(values), [0.0, 0.25, 0.5, 0.75, 1.0])
        rows.append([region, model_id, *(repr(float(v)) for v in q), str(len(values))])
    return rows


def write_report(runs_root: str | Path, out_dir: str | Path) -> dict[str, Path]:
    """Emit report.csv, report.txt, and boxplot_<metric>.csv files.

    Returns the paths written, keyed by artifact name.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = find_manifests(runs_root)
    rows = merge_comparison_rows(manifests)

    written: dict[str, Path] = {}
    report_csv = out_dir / "report.csv"
    report_csv.write_text(rows_to_csv(rows))
    written["report_csv"] = report_csv

    report_txt = out_dir / "report.txt"
    report_txt.write_text(render_text_table(rows))
    written["report_txt"] = report_txt

    metrics_present = sorted({r["metric"] for r in rows}) or ["rmse", "corr", "nse"]
    for metric in metrics_present:
        data = boxplot_rows(manifests, metric)
        path = out_dir / f"boxplot_{metric}.csv"
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(BOXPLOT_HEADER)
        writer.writerows(data)
        path.write_text(buf.getvalue())
        written[f"boxplot_{metric}"] = path
    return written
