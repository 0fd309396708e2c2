"""Class-incremental schedule: per-task label spaces and relabeling.

Pixels carry final-taxonomy leaf ids in the ground truth. At task t only
the classes introduced at t (C^t) are labeled; everything else becomes
background, mirroring the overlapped setting where one image can contain
old, current, and future classes. In incremental steps the frozen old
model turns background pixels into pseudo-labels of old classes (or marks
them ignore when skipped).

Label grid conventions: node ids are >= 1, BACKGROUND = -1, IGNORE = -2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .taxonomy import TaxonomyTree

BACKGROUND = -1
IGNORE = -2

__all__ = [
    "BACKGROUND", "IGNORE", "ProtocolError", "TaskStep", "Protocol",
    "relabel", "pseudo_label", "split_known_class", "eval_class_map",
]


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskStep:
    index: int  # 1-based; 1 is base training
    new_classes: frozenset[int]  # leaf classes introduced at this task
    new_ancestors: frozenset[int]  # internal nodes arriving with them
    epochs: int
    lr0: float


@dataclass(frozen=True)
class Protocol:
    tasks: tuple[TaskStep, ...]
    mode: str  # "background" | "known_class"
    split_ratios: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.mode not in ("background", "known_class"):
            raise ProtocolError(f"unknown increment mode {self.mode!r}")
        seen: set[int] = set()
        for step in self.tasks:
            if seen & step.new_classes:
                raise ProtocolError("task class sets must be pairwise disjoint")
            seen |= step.new_classes
        if not self.tasks or not self.tasks[0].new_classes:
            raise ProtocolError("base task must introduce at least one class")
        if self.mode == "known_class":
            if len(self.split_ratios) != len(self.tasks):
                raise ProtocolError("known-class mode needs one split ratio per task")
            if abs(sum(self.split_ratios) - 1.0) > 1e-9:
                raise ProtocolError(
                    f"split ratios must sum to 1, got {sum(self.split_ratios)}")

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def step(self, t: int) -> TaskStep:
        if not 1 <= t <= len(self.tasks):
            raise ProtocolError(f"task index {t} outside 1..{len(self.tasks)}")
        return self.tasks[t - 1]

    def base_classes(self) -> frozenset[int]:
        return self.tasks[0].new_classes

    def novel_classes(self, upto: int) -> frozenset[int]:
        out: set[int] = set()
        for step in self.tasks[1:upto]:
            out |= step.new_classes
        return frozenset(out)


def derive_protocol(tree: TaxonomyTree, mode: str,
                    epochs: list[int], lrs: list[float],
                    split_ratios: tuple[float, ...] = ()) -> Protocol:
    """Read the schedule off the taxonomy's introduced_at annotations: a
    node introduced at task t is a new class if it is a leaf of the task-t
    tree, otherwise a new ancestor."""
    n_tasks = tree.max_task()
    if len(epochs) != n_tasks or len(lrs) != n_tasks:
        raise ProtocolError(
            f"need epochs and lr for each of the {n_tasks} tasks")
    steps = []
    for t in range(1, n_tasks + 1):
        tree_t = tree.subtree_at_task(t)
        arrived = [v for v in tree_t.class_ids
                   if tree.node(v).introduced_at == t]
        leaves_t = set(tree_t.leaves)
        steps.append(TaskStep(
            index=t,
            new_classes=frozenset(v for v in arrived if v in leaves_t),
            new_ancestors=frozenset(v for v in arrived if v not in leaves_t),
            epochs=epochs[t - 1],
            lr0=lrs[t - 1],
        ))
    return Protocol(tasks=tuple(steps), mode=mode, split_ratios=tuple(split_ratios))


def _ancestor_lut(tree: TaxonomyTree, targets: frozenset[int]) -> dict[int, int]:
    """leaf id -> the unique reflexive ancestor inside `targets`, if any."""
    lut = {}
    for leaf in tree.leaves:
        hit = [v for v in tree.ancestors(leaf) if v in targets]
        if hit:
            lut[leaf] = hit[0]  # ancestors() is deepest-first; sets are antichains
    return lut


def relabel(gt_labels: np.ndarray, step: TaskStep, tree: TaxonomyTree) -> np.ndarray:
    """Map ground-truth leaf ids into the task-t label space Y^t.

    A pixel keeps a label only if one of its (reflexive) ancestors is in
    C^t; everything else, old and future classes alike, becomes background.
    """
    gt = np.asarray(gt_labels)
    lut = _ancestor_lut(tree, step.new_classes)
    known = set(tree.leaves) | {BACKGROUND}
    values = np.unique(gt)
    bad = [v for v in values if int(v) not in known]
    if bad:
        raise ProtocolError(f"ground truth contains non-leaf ids {bad}")
    out = np.full_like(gt, BACKGROUND)
    for v in values:
        v = int(v)
        if v in lut:
            out[gt == v] = lut[v]
    return out


def pseudo_label(labels: np.ndarray, features: np.ndarray, old_model,
                 task_index: int, rate: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Replace background pixels by the frozen model's leaf predictions.

    Each background pixel is pseudo-labeled with probability `rate`;
    skipped pixels become IGNORE so no loss ever sees them.
    """
    if task_index < 2:
        raise ProtocolError("pseudo-labeling needs a frozen old model (task >= 2)")
    if not 0.0 <= rate <= 1.0:
        raise ProtocolError(f"pseudo-label rate must be in [0, 1], got {rate}")
    labels = np.asarray(labels)
    out = labels.copy()
    bg = labels == BACKGROUND
    if not bg.any():
        return out
    keep = rng.random(size=labels.shape) < rate
    take = bg & keep
    if take.any():
        flat_feats = np.asarray(features, dtype=np.float64)[take]
        out[take] = old_model.predict(flat_feats)
    out[bg & ~keep] = IGNORE
    return out


def split_known_class(n_samples: int, ratios: tuple[float, ...],
                      seed: int) -> list[np.ndarray]:
    """Deterministically partition sample indices across tasks.

    Every sample lands in exactly one task, so no image is ever seen under
    two labeling taxonomies.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ProtocolError(f"split ratios must sum to 1, got {sum(ratios)}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD15C)))
    order = rng.permutation(n_samples)
    bounds = np.floor(np.cumsum(np.asarray(ratios)) * n_samples).astype(int)
    bounds[-1] = n_samples
    parts = []
    start = 0
    for end in bounds:
        parts.append(np.sort(order[start:end]))
        start = end
    return parts


def eval_class_map(tree_full: TaxonomyTree, tree_t: TaxonomyTree) -> dict[int, int]:
    """Ground-truth mapping for evaluation after task t: each final leaf
    maps to its deepest ancestor that is a *leaf* of the task-t tree;
    leaves with no such ancestor (future classes, or classes hidden behind
    a bifurcated ancestor) count as background."""
    current_leaves = set(tree_t.leaves)
    lut = {}
    for leaf in tree_full.leaves:
        hit = [v for v in tree_full.ancestors(leaf) if v in current_leaves]
        lut[leaf] = hit[0] if hit else BACKGROUND
    return lut
