"""Hierarchical supervision on per-node sigmoid scores.

Two terms, combined by `HierLossConfig`:

* tree-min: for each node, a positive label penalizes the weakest score on
  the node's ancestor path, a negative label the strongest score in its
  subtree. Ancestor and descendant sets include the node itself, so on a
  flat tree this reduces to plain binary cross-entropy.
* per-level CE: subtree-max scores are normalized across each hierarchy
  level by their sum and the ground-truth node's mass is scored, which
  penalizes confident sibling subtrees.

Everything here runs on plain arrays or on autodiff tensors. Min/max ties
route gradients to the first column in node order (see autodiff).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .taxonomy import TaxonomyTree

__all__ = [
    "HierLossConfig", "TreeIndex", "LabelBatch", "build_label_batch",
    "tree_min_loss", "level_ce_loss", "hier_loss",
    "tree_min_batch", "level_ce_batch", "hier_loss_batch",
]


@dataclass(frozen=True)
class HierLossConfig:
    alpha: float = 5.0
    beta: float = 1.0
    score_floor: float = 1e-7

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ValueError("alpha and beta must be >= 0 and not both zero")
        if not 0 < self.score_floor < 0.5:
            raise ValueError("score_floor must lie in (0, 0.5)")


class TreeIndex:
    """Column-indexed view of a taxonomy for vectorized loss evaluation.

    Default column order is ascending node id; a trained head passes its
    own `columns` mapping instead.
    """

    def __init__(self, tree: TaxonomyTree, columns: dict[int, int] | None = None):
        if columns is None:
            columns = {v: i for i, v in enumerate(tree.class_ids)}
        if set(columns) != set(tree.class_ids):
            raise ValueError("column mapping does not cover the taxonomy")
        self.tree = tree
        self.columns = columns
        self.n_nodes = len(columns)
        order = sorted(columns, key=columns.get)
        self.node_of_col = order
        self.anc_cols = [
            np.sort(np.asarray([columns[u] for u in tree.ancestors(v)], dtype=np.intp))
            for v in order
        ]
        self.desc_cols = [
            np.sort(np.asarray([columns[u] for u in tree.descendants(v)], dtype=np.intp))
            for v in order
        ]
        self.levels = []
        for level in range(1, tree.depth + 1):
            node_ids = sorted(tree.nodes_at_level(level), key=columns.get)
            self.levels.append((
                level,
                np.asarray([columns[v] for v in node_ids], dtype=np.intp),
                {v: pos for pos, v in enumerate(node_ids)},
            ))


@dataclass
class LabelBatch:
    """Per-pixel supervision targets aligned with a TreeIndex."""

    positives: np.ndarray  # (N, V) float 0/1
    level_gtpos: list[np.ndarray]  # per level: (N,) position in block, -1 if none


def build_label_batch(labels, index: TreeIndex) -> LabelBatch:
    """Expand node-id labels into loss targets. Labels may name internal
    nodes (pseudo-labels predicted before a bifurcation): positives are the
    node and its ancestors in every case."""
    labels = np.asarray(labels)
    n = len(labels)
    positives = np.zeros((n, index.n_nodes))
    level_gtpos = [np.full(n, -1, dtype=np.intp) for _ in index.levels]
    cache: dict[int, tuple[np.ndarray, list[tuple[int, int]]]] = {}
    for node in np.unique(labels):
        node = int(node)
        path = index.tree.ancestors(node)
        row = np.zeros(index.n_nodes)
        row[[index.columns[u] for u in path]] = 1.0
        hits = []
        for li, (level, _, pos_of) in enumerate(index.levels):
            for u in path:
                if index.tree.level(u) == level:
                    hits.append((li, pos_of[u]))
        cache[node] = (row, hits)
    for i, node in enumerate(labels):
        row, hits = cache[int(node)]
        positives[i] = row
        for li, pos in hits:
            level_gtpos[li][i] = pos
    return LabelBatch(positives=positives, level_gtpos=level_gtpos)


def subtree_max(scores, index: TreeIndex):
    """s'_v = max over v's subtree, per node column. Shared by both loss
    terms, so one evaluation serves tree-min and per-level CE alike."""
    return [ad.reduce_max(ad.take_cols(scores, index.desc_cols[c]), axis=1)
            for c in range(index.n_nodes)]


def tree_min_batch(scores, batch: LabelBatch, index: TreeIndex,
                   score_floor: float = 1e-7, sprime=None):
    """Per-pixel tree-min loss, shape (N,). `scores` is (N, V)."""
    if sprime is None:
        sprime = subtree_max(scores, index)
    total = None
    for col in range(index.n_nodes):
        min_anc = ad.reduce_min(ad.take_cols(scores, index.anc_cols[col]), axis=1)
        pos = batch.positives[:, col]
        term = -(pos * ad.log(ad.maximum(min_anc, score_floor))) \
            - ((1.0 - pos) * ad.log(ad.maximum(1.0 - sprime[col], score_floor)))
        total = term if total is None else total + term
    return total


def level_ce_batch(scores, batch: LabelBatch, index: TreeIndex,
                   score_floor: float = 1e-7, sprime=None):
    """Per-pixel cross-entropy summed over hierarchy levels, shape (N,)."""
    if sprime is None:
        sprime = subtree_max(scores, index)
    n = batch.positives.shape[0]
    total = np.zeros(n)
    for li, (_, cols, _) in enumerate(index.levels):
        if len(cols) < 2:
            continue  # a single node normalizes to mass 1
        gtpos = batch.level_gtpos[li]
        valid = (gtpos >= 0).astype(np.float64)
        if not valid.any():
            continue
        block = [sprime[c] for c in cols]
        denom = block[0]
        for b in block[1:]:
            denom = denom + b
        numer = None
        for pos, b in enumerate(block):
            sel = (gtpos == pos).astype(np.float64)
            contrib = b * sel
            numer = contrib if numer is None else numer + contrib
        term = -(valid * ad.log(ad.maximum(numer / denom, score_floor)))
        total = total + term
    return total


def hier_loss_batch(scores, batch: LabelBatch, index: TreeIndex,
                    cfg: HierLossConfig):
    """alpha * tree-min + beta * level-CE, averaged over the pixel batch."""
    n = batch.positives.shape[0]
    if n == 0:
        return 0.0
    sprime = subtree_max(scores, index)
    per_pixel = 0.0
    if cfg.alpha != 0.0:
        per_pixel = per_pixel + cfg.alpha * tree_min_batch(
            scores, batch, index, cfg.score_floor, sprime)
    if cfg.beta != 0.0:
        per_pixel = per_pixel + cfg.beta * level_ce_batch(
            scores, batch, index, cfg.score_floor, sprime)
    return ad.vsum(per_pixel) / n


# -- single-pixel wrappers over dict scores ----------------------------------


def _as_row(scores, index: TreeIndex) -> np.ndarray:
    if isinstance(scores, dict):
        missing = [v for v in index.columns if v not in scores]
        if missing:
            raise ValueError(f"scores missing for nodes {sorted(missing)}")
        row = np.empty((1, index.n_nodes))
        for v, col in index.columns.items():
            row[0, col] = scores[v]
        return row
    row = np.asarray(scores, dtype=np.float64).reshape(1, -1)
    if row.shape[1] != index.n_nodes:
        raise ValueError(
            f"expected {index.n_nodes} node scores, got {row.shape[1]}")
    return row


def tree_min_loss(scores, label: int, tree: TaxonomyTree,
                  score_floor: float = 1e-7) -> float:
    """Tree-min loss for one pixel. `scores` maps node id -> sigmoid score
    (or is an array in ascending node-id order); `label` is the pixel's node."""
    index = TreeIndex(tree)
    row = _as_row(scores, index)
    batch = build_label_batch([label], index)
    return float(tree_min_batch(row, batch, index, score_floor)[0])


def level_ce_loss(scores, label: int, tree: TaxonomyTree,
                  score_floor: float = 1e-7) -> float:
    """Per-level CE for one pixel; levels below the label's depth are skipped."""
    index = TreeIndex(tree)
    row = _as_row(scores, index)
    batch = build_label_batch([label], index)
    return float(level_ce_batch(row, batch, index, score_floor)[0])


def hier_loss(scores, labels, tree: TaxonomyTree, cfg: HierLossConfig) -> float:
    """Weighted hierarchical loss averaged over a pixel batch.

    `scores` is (N, V) in ascending node-id column order, `labels` the
    per-pixel node ids.
    """
    index = TreeIndex(tree)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores.reshape(1, -1)
    batch = build_label_batch(np.atleast_1d(labels), index)
    return float(hier_loss_batch(scores, batch, index, cfg))
