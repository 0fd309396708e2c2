"""Command-line entry points: generate / run / eval / report.

Exit codes: 0 success, 2 configuration or input validation problems
(the message names the offending field), 1 runtime failures such as
training divergence (completed checkpoints from earlier tasks are kept).
HYPERTAX_WORKERS controls how many processes generate dataset samples.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_run_config, load_synth_config
from .metrics import IoUCounts, accumulate_counts, report_from_counts
from .model import CheckpointError, load_checkpoint
from .optim import TrainingError
from .protocol import BACKGROUND, ProtocolError, eval_class_map
from .reporting import ReportError, merge_runs
from .runner import run_protocol
from .synth import ClassGenerator, Dataset, build_dataset, generate_scene, \
    hierarchy_signal_check, read_dataset, write_dataset
from .taxonomy import TaxonomyError, load_taxonomy, parse_taxonomy

DATASET_FILENAME = "dataset.bin"


def _workers() -> int:
    raw = os.environ.get("HYPERTAX_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HYPERTAX_WORKERS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"HYPERTAX_WORKERS must be >= 1, got {n}")
    return n


def cmd_generate(args) -> int:
    cfg, taxonomy_path = load_synth_config(args.config, args.set)
    tree = load_taxonomy(taxonomy_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = _workers()
    if workers == 1:
        ds = build_dataset(cfg, tree)
    else:
        gen = ClassGenerator(tree, cfg)
        hierarchy_signal_check(gen)
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scenes = list(pool.map(_scene_worker,
                                   [(cfg, tree.to_text(), i)
                                    for i in range(cfg.n_samples)]))
        ds = Dataset(cfg=cfg, tree=tree,
                     features=np.stack([s[0] for s in scenes]),
                     labels=np.stack([s[1] for s in scenes]))
    path = out / DATASET_FILENAME
    write_dataset(path, ds)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest = {
        "command": "generate",
        "hypertax": __version__,
        "config": json.loads(cfg.canonical_json()),
        "config_hash": cfg.config_hash(),
        "taxonomy": str(taxonomy_path),
        "taxonomy_structural_hash": tree.structural_hash(),
        "dataset_file": DATASET_FILENAME,
        "dataset_sha256": digest,
        "samples": cfg.n_samples,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"wrote {path} ({cfg.n_samples} samples, sha256 {digest[:12]}...)")
    return 0


def _scene_worker(packed):
    cfg, tree_text, index = packed
    tree = parse_taxonomy(tree_text)
    gen = ClassGenerator(tree, cfg)
    return generate_scene(cfg, tree, gen, index)


def cmd_run(args) -> int:
    cfg = load_run_config(args.config, args.set)
    data_path = Path(args.data) / DATASET_FILENAME
    if not data_path.exists():
        raise ConfigError(f"no dataset at {data_path}; run 'generate' first")
    dataset = read_dataset(data_path)
    summary = run_protocol(cfg, dataset, args.out)
    final = summary["final"]
    print(f"run {cfg.run_id}: "
          f"final mIoU base={_show(final['base'])} "
          f"novel={_show(final['novel'])} all={_show(final['all'])}")
    print(f"outputs in {args.out}")
    return 0


def _show(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    data_path = Path(args.data) / DATASET_FILENAME
    if not data_path.exists():
        raise ConfigError(f"no dataset at {data_path}")
    dataset = read_dataset(data_path)
    tree_full = parse_taxonomy(meta["protocol_taxonomy_text"])
    if tree_full.structural_hash() != dataset.tree.structural_hash():
        raise ConfigError(
            "checkpoint taxonomy does not match the dataset's taxonomy")
    test_x, test_y = dataset.test
    lut = eval_class_map(tree_full, model.tree)
    counts = IoUCounts.empty(sorted(model.tree.leaves))
    d_in = test_x.shape[-1]
    for i in range(test_x.shape[0]):
        gt = test_y[i]
        eval_gt = np.full_like(gt, BACKGROUND)
        for v in np.unique(gt):
            if int(v) != BACKGROUND:
                eval_gt[gt == int(v)] = lut[int(v)]
        pred = model.predict(test_x[i].reshape(-1, d_in),
                             use_hierarchy=meta.get("use_hierarchy", True))
        accumulate_counts(counts, eval_gt.ravel(), pred)
    report = report_from_counts(counts, meta.get("task", 0),
                                set(meta.get("base_classes", [])),
                                set(meta.get("novel_classes", [])))
    print(f"checkpoint {args.checkpoint} (task {report.task})")
    for cid in sorted(report.per_class_iou):
        iou = report.per_class_iou[cid]
        shown = "-" if np.isnan(iou) else f"{iou:.4f}"
        print(f"  class {model.tree.name(cid):<12} iou {shown}")
    print(f"  mIoU base={_show_nan(report.miou_base)} "
          f"novel={_show_nan(report.miou_novel)} all={_show_nan(report.miou_all)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "task": report.task,
            "per_class_iou": {str(k): (None if np.isnan(v) else v)
                              for k, v in report.per_class_iou.items()},
            "miou": {"base": None if np.isnan(report.miou_base) else report.miou_base,
                     "novel": None if np.isnan(report.miou_novel) else report.miou_novel,
                     "all": None if np.isnan(report.miou_all) else report.miou_all},
        }
        (out / "eval.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _show_nan(v: float) -> str:
    return "-" if np.isnan(v) else f"{v:.4f}"


def cmd_report(args) -> int:
    result = merge_runs(args.runs, args.out, make_figure=not args.no_figure)
    print(f"merged {len(result['runs'])} run(s): {', '.join(result['runs'])}")
    print(f"comparison table: {result['comparison']}")
    print(f"curve data:       {result['curves']}")
    if result["figure"]:
        print(f"curve figure:     {result['figure']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypertax",
        description="Taxonomy-aware class-incremental classification "
                    "on the Poincare ball")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="dataset config (YAML)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("run", help="execute an incremental protocol")
    p.add_argument("--config", required=True, help="run config (YAML)")
    p.add_argument("--data", required=True, help="directory with dataset.bin")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory with dataset.bin")
    p.add_argument("--out", help="optional output directory for eval.json")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="merge finished runs into comparison tables")
    p.add_argument("runs", nargs="+", help="run output directories")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--no-figure", action="store_true",
                   help="skip rendering curves.png")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, TaxonomyError, ReportError, CheckpointError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
