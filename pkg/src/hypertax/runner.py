"""End-to-end protocol execution: expand, train, checkpoint, evaluate.

One run directory holds a manifest (written before training), one
checkpoint per task, the metrics CSV, and a JSON summary with the
per-increment mIoU curve. The test split and its ground truth never change
across increments; evaluation after task t scores the leaves of the task-t
tree, mapping each true leaf to its deepest currently-predictable ancestor.
"""

from __future__ import annotations

import json
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .metrics import IoUCounts, MetricsReport, accumulate_counts, \
    report_from_counts
from .model import HyperbolicClassifier, save_checkpoint
from .protocol import BACKGROUND, Protocol, derive_protocol, eval_class_map, \
    split_known_class
from .reporting import write_metrics_csv, write_summary
from .synth import Dataset
from .taxonomy import TaxonomyTree, load_taxonomy
from .training import STREAM_EXPANSION, STREAM_MODEL_INIT, train_task

__all__ = ["run_protocol", "evaluate", "build_protocol"]


def build_protocol(cfg: RunConfig, tree: TaxonomyTree) -> Protocol:
    try:
        return derive_protocol(tree, cfg.mode, list(cfg.epochs), list(cfg.lr),
                               cfg.split_ratios)
    except Exception as exc:
        raise ConfigError(str(exc)) from None


def evaluate(model: HyperbolicClassifier, test_features: np.ndarray,
             test_labels: np.ndarray, protocol: Protocol, t: int,
             tree_full: TaxonomyTree, use_hierarchy: bool = True) -> MetricsReport:
    """mIoU over the leaves of the task-t tree on the frozen test split."""
    if test_features.shape[0] == 0:
        raise ValueError("evaluation needs a non-empty test set")
    tree_t = model.tree
    lut = eval_class_map(tree_full, tree_t)
    counts = IoUCounts.empty(sorted(tree_t.leaves))
    d_in = test_features.shape[-1]
    for i in range(test_features.shape[0]):
        gt = test_labels[i]
        eval_gt = np.full_like(gt, BACKGROUND)
        for v in np.unique(gt):
            v = int(v)
            if v != BACKGROUND:
                eval_gt[gt == v] = lut[v]
        pred = model.predict(test_features[i].reshape(-1, d_in),
                             use_hierarchy=use_hierarchy)
        accumulate_counts(counts, eval_gt.ravel(), pred)
    base = set(protocol.base_classes())
    novel = set(protocol.novel_classes(t))
    return report_from_counts(counts, t, base, novel)


def run_protocol(cfg: RunConfig, dataset: Dataset, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tree_full = load_taxonomy(cfg.taxonomy)
    if tree_full.structural_hash() != dataset.tree.structural_hash():
        raise ConfigError(
            "field 'taxonomy': structure does not match the dataset's taxonomy")
    protocol = build_protocol(cfg, tree_full)
    settings = cfg.settings()

    manifest = {
        "run_id": cfg.run_id,
        "build": {"hypertax": __version__, "python": platform.python_version(),
                  "numpy": np.__version__},
        "seed": cfg.seed,
        "config": cfg.materialized(),
        "dataset_header": dataset.header,
        "outputs": {"metrics_csv": "metrics.csv", "summary": "summary.json",
                    "checkpoints": [f"checkpoint_task{t}.json"
                                    for t in range(1, protocol.n_tasks + 1)]},
        "tasks": [],
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))

    train_x, train_y = dataset.train
    test_x, test_y = dataset.test
    if cfg.mode == "known_class":
        parts = split_known_class(train_x.shape[0], cfg.split_ratios, cfg.seed)
    else:
        parts = [np.arange(train_x.shape[0])] * protocol.n_tasks

    model = HyperbolicClassifier(
        tree_full.subtree_at_task(1),
        [dataset.cfg.d_in, *cfg.hidden, cfg.embed_dim],
        cfg.curvature,
        np.random.default_rng(np.random.SeedSequence((cfg.seed, STREAM_MODEL_INIT))),
        max_tangent_norm=cfg.feature_clip)

    reports: list[MetricsReport] = []
    diagnostics = []
    old_model = None
    for t in range(1, protocol.n_tasks + 1):
        started = time.perf_counter()
        if t >= 2:
            old_model = model.snapshot()
            tree_t = tree_full.subtree_at_task(t)
            step = protocol.step(t)
            model.add_classes(
                tree_t,
                np.random.default_rng(
                    np.random.SeedSequence((cfg.seed, STREAM_EXPANSION, t))),
                new_ids=sorted(step.new_classes | step.new_ancestors))
        idx = parts[t - 1]
        diag = train_task(model, protocol, t, train_x[idx], train_y[idx],
                          settings, cfg.seed, old_model=old_model,
                          tree_full=tree_full)
        save_checkpoint(model, out / f"checkpoint_task{t}.json", meta={
            "task": t,
            "run_id": cfg.run_id,
            "use_hierarchy": cfg.use_hierarchy,
            "base_classes": sorted(protocol.base_classes()),
            "novel_classes": sorted(protocol.novel_classes(t)),
            "protocol_taxonomy_text": tree_full.to_text(),
        })
        report = evaluate(model, test_x, test_y, protocol, t, tree_full,
                          use_hierarchy=cfg.use_hierarchy)
        reports.append(report)
        diag["wall_clock_total_s"] = time.perf_counter() - started
        diag.pop("losses", None)
        diagnostics.append(diag)

    write_metrics_csv(out / "metrics.csv", cfg.run_id, reports, protocol)
    summary = write_summary(out / "summary.json", cfg, reports, tree_full,
                            diagnostics)
    manifest["tasks"] = diagnostics
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return summary
