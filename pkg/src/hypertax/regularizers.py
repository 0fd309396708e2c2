"""Incremental regularizers: relation distillation and radius correlation.

Relation distillation keeps the nearest-hyperplane structure of the frozen
old head: before an increment starts, each old class records its k closest
old-class hyperplanes (by absolute signed distance from its offset) and the
largest such distance. During training an InfoNCE-style loss rewards the
recorded neighbours staying relatively close under the current head.

Radius correlation ties each pixel's embedding norm to the frozen model's,
leaving angular motion free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import signed_distance
from .model import HyperbolicClassifier, node_logits
from .protocol import BACKGROUND, IGNORE

__all__ = [
    "RegWeights", "AnchorSet", "hyperplane_distance", "build_anchor_sets",
    "relation_loss", "distance_correlation_loss",
]


@dataclass(frozen=True)
class RegWeights:
    w_dist: float = 0.01
    w_rel: float = 10.0
    tau: float = 10.0
    k: int = 3

    def __post_init__(self):
        if self.w_dist < 0 or self.w_rel < 0:
            raise ValueError("regularizer weights must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class AnchorSet:
    """Frozen neighbourhood of one old class."""

    anchor: int
    positives: tuple[int, ...]  # k nearest old classes, nearest first
    d_max: float  # largest reference distance for this anchor
    reference: dict[int, float]  # full distance vector at freeze time


def hyperplane_distance(y1: int, y2: int, model: HyperbolicClassifier) -> float:
    """|zeta_{y2}(o_{y1})|: how far y1's offset sits from y2's hyperplane.
    Not symmetric in general."""
    if y1 in (BACKGROUND, IGNORE) or y2 in (BACKGROUND, IGNORE):
        raise ValueError("background carries no hyperplane and is excluded "
                         "from relational distances")
    if y1 == y2:
        raise ValueError("distance is defined between two distinct classes")
    c1, c2 = model.columns[y1], model.columns[y2]
    return float(abs(signed_distance(model.offsets[c1], model.offsets[c2],
                                     model.orients[c2], model.curvature)))


def build_anchor_sets(old_model: HyperbolicClassifier, k: int) -> dict[int, AnchorSet]:
    """Record, for every old class, its k nearest old-class hyperplanes."""
    ids = list(old_model.node_order)
    if k >= len(ids):
        raise ValueError(
            f"k={k} must be smaller than the number of old classes ({len(ids)})")
    anchors = {}
    for y in ids:
        dists = {other: hyperplane_distance(y, other, old_model)
                 for other in ids if other != y}
        ranked = sorted(dists, key=lambda o: (dists[o], o))
        anchors[y] = AnchorSet(anchor=y, positives=tuple(ranked[:k]),
                               d_max=max(dists.values()), reference=dists)
    return anchors


def relation_loss(offsets, orients, model: HyperbolicClassifier,
                  anchors: dict[int, AnchorSet], tau: float):
    """InfoNCE over current old-class distances against the frozen anchors.

    `offsets`/`orients` are the live head parameters (tensors during
    training); the candidate set of every anchor is all other old classes.
    """
    old_ids = sorted(anchors)
    missing = [y for y in old_ids if y not in model.columns]
    if missing:
        raise ValueError(f"old classes missing from the head: {missing}")
    total = None
    for y in old_ids:
        a = anchors[y]
        others = [o for o in old_ids if o != y]
        cols = np.asarray([model.columns[o] for o in others], dtype=np.intp)
        o_y = ad.take_rows(offsets, np.asarray([model.columns[y]], dtype=np.intp))
        zeta = node_logits(o_y, ad.take_rows(offsets, cols),
                           ad.take_rows(orients, cols), model.curvature)
        d = ad.absolute(zeta)  # (1, len(others))
        w = ad.exp(1.0 - (tau / a.d_max) * d)
        denom = ad.vsum(w)
        pos_idx = np.asarray([others.index(p) for p in a.positives], dtype=np.intp)
        numer = ad.vsum(ad.take_cols(w, pos_idx))
        term = ad.log(denom) - ad.log(numer)
        total = term if total is None else total + term
    return total / len(old_ids)


def distance_correlation_loss(new_embeddings, old_embeddings):
    """Mean squared difference of embedding norms; rotations are free."""
    old = np.asarray(old_embeddings, dtype=np.float64)
    n = ad.value(new_embeddings).shape[0]
    if old.shape[0] != n:
        raise ValueError(
            f"batch mismatch: {n} new embeddings vs {old.shape[0]} old")
    if n == 0:
        return 0.0
    new_norm = ad.sqrt(ad.maximum(
        ad.vsum(new_embeddings * new_embeddings, axis=-1), 1e-300))
    old_norm = np.linalg.norm(old, axis=-1)
    diff = new_norm - old_norm
    return ad.vsum(diff * diff) / n
