"""Per-task training: loss assembly and the optimization loop.

One task = relabel the task's data into its label space, pseudo-label the
background from the frozen model (incremental steps), then minimize

    hier (or flat BCE) + w_dist * radius correlation + w_rel * relation loss

with Riemannian SGD under a poly learning-rate schedule. The flat-BCE path
is the ablation baseline: leaves only, background pixels as all-negative
targets, which is exactly the background-shift failure mode the
hierarchical path avoids.

Randomness is drawn from per-purpose streams keyed on (seed, STREAM_*, task)
so runs are reproducible end to end.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .losses import HierLossConfig, LabelBatch, TreeIndex, build_label_batch, \
    hier_loss_batch
from .model import HyperbolicClassifier, gradients
from .optim import RiemannianSGD, TrainingError, poly_lr
from .protocol import BACKGROUND, IGNORE, Protocol, pseudo_label, relabel
from .regularizers import RegWeights, build_anchor_sets, \
    distance_correlation_loss, relation_loss
from .taxonomy import TaxonomyTree

STREAM_MODEL_INIT = 100
STREAM_EXPANSION = 101
STREAM_PSEUDO = 102
STREAM_SHUFFLE = 103

__all__ = [
    "TrainSettings", "train_task", "flat_bce_batch",
    "STREAM_MODEL_INIT", "STREAM_EXPANSION", "STREAM_PSEUDO", "STREAM_SHUFFLE",
]


@dataclass
class TrainSettings:
    hier: HierLossConfig = field(default_factory=HierLossConfig)
    reg: RegWeights = field(default_factory=RegWeights)
    use_hierarchy: bool = True
    pseudo_labeling: bool = True
    pseudo_label_rate: float = 1.0
    batch_samples: int = 6
    momentum: float = 0.9
    weight_decay: float = 1e-4
    poly_power: float = 0.9


def flat_bce_batch(scores, targets: np.ndarray, leaf_cols: np.ndarray,
                   score_floor: float):
    """Plain per-leaf BCE. `targets` is (N, L) one-hot with all-zero rows
    for background pixels."""
    s = ad.take_cols(scores, leaf_cols)
    pos = -(targets * ad.log(ad.maximum(s, score_floor)))
    neg = -((1.0 - targets) * ad.log(ad.maximum(1.0 - s, score_floor)))
    return ad.vsum(pos + neg) / targets.shape[0]


def _slice_label_batch(batch: LabelBatch, idx: np.ndarray) -> LabelBatch:
    return LabelBatch(positives=batch.positives[idx],
                      level_gtpos=[g[idx] for g in batch.level_gtpos])


@dataclass
class TaskData:
    """Flattened, relabeled pixels of one task, ready for batching."""

    x: np.ndarray  # (P, d_in) all non-ignore pixels
    y: np.ndarray  # (P,) node ids or BACKGROUND
    sample_of: np.ndarray  # (P,) owning sample index
    old_embeddings: np.ndarray | None = None  # frozen-model ball points, aligned to x


def prepare_task_data(features: np.ndarray, gt_labels: np.ndarray,
                      protocol: Protocol, t: int, tree_full: TaxonomyTree,
                      settings: TrainSettings, seed: int,
                      old_model: HyperbolicClassifier | None) -> TaskData:
    step = protocol.step(t)
    d_in = features.shape[-1]
    xs, ys, owners = [], [], []
    rng = np.random.default_rng(np.random.SeedSequence((seed, STREAM_PSEUDO, t)))
    for i in range(features.shape[0]):
        labels = relabel(gt_labels[i], step, tree_full)
        if t >= 2 and settings.pseudo_labeling:
            labels = pseudo_label(labels, features[i], old_model, t,
                                  settings.pseudo_label_rate, rng)
        keep = labels != IGNORE
        xs.append(features[i][keep].reshape(-1, d_in))
        ys.append(labels[keep].ravel())
        owners.append(np.full(int(keep.sum()), i))
    data = TaskData(x=np.concatenate(xs), y=np.concatenate(ys),
                    sample_of=np.concatenate(owners))
    if old_model is not None and settings.reg.w_dist > 0 and t >= 2:
        data.old_embeddings = old_model.embed(data.x)
    return data


def train_task(model: HyperbolicClassifier, protocol: Protocol, t: int,
               features: np.ndarray, gt_labels: np.ndarray,
               settings: TrainSettings, seed: int,
               old_model: HyperbolicClassifier | None = None,
               tree_full: TaxonomyTree | None = None) -> dict:
    """Train the model in place for task t; returns diagnostics."""
    if t >= 2 and old_model is None:
        raise TrainingError("incremental steps need the frozen previous model")
    tree_full = tree_full if tree_full is not None else model.tree
    step = protocol.step(t)
    data = prepare_task_data(features, gt_labels, protocol, t, tree_full,
                             settings, seed, old_model)

    index = TreeIndex(model.tree, model.columns)
    labeled = data.y >= 1
    label_batch = build_label_batch(np.where(labeled, data.y, 1), index)
    leaf_cols = np.asarray([model.columns[v] for v in model.tree.leaves],
                           dtype=np.intp)
    leaf_pos = {v: i for i, v in enumerate(model.tree.leaves)}

    anchors = None
    if t >= 2 and settings.reg.w_rel > 0:
        anchors = build_anchor_sets(old_model, settings.reg.k)

    opt = RiemannianSGD(model, settings.momentum, settings.weight_decay)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence((seed, STREAM_SHUFFLE, t)))
    n_samples = features.shape[0]
    batch_samples = min(settings.batch_samples, n_samples)
    batches_per_epoch = int(np.ceil(n_samples / batch_samples))
    max_iter = step.epochs * batches_per_epoch
    losses = []
    start = time.perf_counter()
    iteration = 0
    for _ in range(step.epochs):
        order = shuffle_rng.permutation(n_samples)
        for b in range(batches_per_epoch):
            chosen = order[b * batch_samples:(b + 1) * batch_samples]
            rows = np.isin(data.sample_of, chosen)
            loss_value = _train_step(
                model, opt, data, rows, labeled, label_batch, index,
                leaf_cols, leaf_pos, settings, anchors,
                lr=poly_lr(iteration, max_iter, step.lr0, settings.poly_power),
                t=t)
            if not np.isfinite(loss_value):
                raise TrainingError(
                    f"task {t}: loss diverged at iteration {iteration}")
            losses.append(loss_value)
            iteration += 1
    return {
        "task": t,
        "iterations": iteration,
        "losses": losses,
        "final_loss": losses[-1] if losses else None,
        "wall_clock_s": time.perf_counter() - start,
        "pixels": int(data.x.shape[0]),
    }


def _train_step(model, opt, data: TaskData, rows, labeled, label_batch,
                index, leaf_cols, leaf_pos, settings: TrainSettings,
                anchors, lr: float, t: int) -> float:
    x = data.x[rows]
    y = data.y[rows]
    hier_idx = np.flatnonzero(labeled[rows])
    batch_labels = _slice_label_batch(label_batch, np.flatnonzero(rows)[hier_idx])
    old_emb = data.old_embeddings[rows] if data.old_embeddings is not None else None

    def loss_fn(params):
        h, scores = model._forward(x, params)
        if settings.use_hierarchy:
            if len(hier_idx):
                sub = ad.take_rows(scores, hier_idx)
                total = hier_loss_batch(sub, batch_labels, index, settings.hier)
            else:
                total = 0.0
        else:
            targets = np.zeros((len(y), len(leaf_cols)))
            for i, label in enumerate(y):
                if label >= 1:
                    targets[i, leaf_pos[int(label)]] = 1.0
            total = flat_bce_batch(scores, targets, leaf_cols,
                                   settings.hier.score_floor)
        if t >= 2:
            if old_emb is not None:
                total = total + settings.reg.w_dist * \
                    distance_correlation_loss(h, old_emb)
            if anchors is not None:
                total = total + settings.reg.w_rel * relation_loss(
                    params["head.offsets"], params["head.orients"],
                    model, anchors, settings.reg.tau)
        return total

    value, grads = gradients(model, loss_fn)
    opt.step(grads, lr)
    return value
