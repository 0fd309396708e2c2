"""Metrics serialization: per-run CSV/JSON and cross-run comparison tables.

CSV layout (one row per class per increment per split, plus the split's
mean repeated on each row):

    run_id,task,split,class_id,iou,miou

`report` merges completed runs into a comparison table and a per-increment
curve CSV, and renders the curves to PNG next to the delimited output.
Floats are written with repr so identical runs produce byte-identical
files; undefined values (empty splits, classes absent everywhere) are
empty fields in CSV and null in JSON.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .metrics import MetricsReport
from .protocol import Protocol
from .taxonomy import TaxonomyTree

__all__ = ["write_metrics_csv", "write_summary", "merge_runs", "ReportError"]

CSV_COLUMNS = ["run_id", "task", "split", "class_id", "iou", "miou"]


class ReportError(RuntimeError):
    pass


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def _nan_to_none(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def write_metrics_csv(path, run_id: str, reports: list[MetricsReport],
                      protocol: Protocol) -> None:
    base = set(protocol.base_classes())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            novel = set(protocol.novel_classes(report.task))
            splits = (
                ("base", sorted(c for c in report.per_class_iou if c in base)),
                ("novel", sorted(c for c in report.per_class_iou if c in novel)),
                ("all", sorted(report.per_class_iou)),
            )
            mious = {"base": report.miou_base, "novel": report.miou_novel,
                     "all": report.miou_all}
            for split, members in splits:
                for cid in members:
                    writer.writerow([
                        run_id, report.task, split, cid,
                        _fmt(report.per_class_iou[cid]), _fmt(mious[split]),
                    ])


def summary_dict(cfg, reports: list[MetricsReport], tree: TaxonomyTree,
                 diagnostics: list[dict]) -> dict:
    increments = []
    for report in reports:
        increments.append({
            "task": report.task,
            "miou": {
                "base": _nan_to_none(report.miou_base),
                "novel": _nan_to_none(report.miou_novel),
                "all": _nan_to_none(report.miou_all),
            },
            "per_class_iou": {
                str(c): _nan_to_none(v) for c, v in
                sorted(report.per_class_iou.items())
            },
        })
    return {
        "run_id": cfg.run_id,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "n_tasks": len(reports),
        "taxonomy_structural_hash": tree.structural_hash(),
        "config": cfg.materialized(),
        "increments": increments,
        "curve": [
            {"task": inc["task"], **inc["miou"]} for inc in increments
        ],
        "final": increments[-1]["miou"] if increments else None,
        "diagnostics": diagnostics,
    }


def write_summary(path, cfg, reports, tree, diagnostics) -> dict:
    summary = summary_dict(cfg, reports, tree, diagnostics)
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def _load_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.json"
    if not path.exists():
        raise ReportError(f"{run_dir} has no summary.json (incomplete run?)")
    return json.loads(path.read_text())


def merge_runs(run_dirs: list, out_dir, make_figure: bool = True) -> dict:
    """Merge run summaries into comparison.csv + curves.csv (+ curves.png)."""
    if not run_dirs:
        raise ReportError("need at least one run directory")
    summaries = [_load_summary(d) for d in run_dirs]
    key = (summaries[0]["taxonomy_structural_hash"], summaries[0]["mode"],
           summaries[0]["n_tasks"])
    for d, s in zip(run_dirs, summaries):
        this = (s["taxonomy_structural_hash"], s["mode"], s["n_tasks"])
        if this != key:
            raise ReportError(
                f"run {s['run_id']!r} ({d}) uses a different protocol "
                f"(taxonomy/mode/task count {this} != {key}); refusing to merge")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    comparison = out / "comparison.csv"
    with open(comparison, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "task", "split", "miou"])
        for s in summaries:
            for inc in s["increments"]:
                for split in ("base", "novel", "all"):
                    writer.writerow([s["run_id"], inc["task"], split,
                                     _fmt(inc["miou"][split])])

    curves = out / "curves.csv"
    with open(curves, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "task", "base", "novel", "all"])
        for s in summaries:
            for point in s["curve"]:
                writer.writerow([s["run_id"], point["task"], _fmt(point["base"]),
                                 _fmt(point["novel"]), _fmt(point["all"])])

    figure_path = None
    if make_figure:
        figure_path = out / "curves.png"
        _render_curves(summaries, figure_path)
    return {
        "comparison": str(comparison),
        "curves": str(curves),
        "figure": str(figure_path) if figure_path else None,
        "runs": [s["run_id"] for s in summaries],
    }


def _render_curves(summaries: list[dict], path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharex=True)
    for which, ax in zip(("all", "base"), axes):
        for s in summaries:
            xs = [p["task"] for p in s["curve"]]
            ys = [p[which] if p[which] is not None else float("nan")
                  for p in s["curve"]]
            ax.plot(xs, ys, marker="o", label=s["run_id"])
        ax.set_xlabel("increment")
        ax.set_ylabel(f"{which} mIoU")
        ax.set_ylim(0, 1)
        ax.grid(alpha=0.3)
        ax.set_xticks(sorted({p["task"] for s in summaries for p in s["curve"]}))
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
