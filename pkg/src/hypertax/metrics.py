"""Per-class IoU and mean IoU over base/novel/all splits.

Predictions always name a current leaf (there is no background output), so
true-background pixels can only show up as false positives of whatever
class was predicted; they never count as anyone's false negative. Classes
absent from both ground truth and prediction are left out of the mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .protocol import BACKGROUND

__all__ = ["EvaluationError", "IoUCounts", "MetricsReport", "accumulate_counts",
           "report_from_counts"]


class EvaluationError(RuntimeError):
    pass


@dataclass
class IoUCounts:
    class_ids: list[int]
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @classmethod
    def empty(cls, class_ids: list[int]) -> "IoUCounts":
        n = len(class_ids)
        return cls(list(class_ids), np.zeros(n, dtype=np.int64),
                   np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))


@dataclass
class MetricsReport:
    task: int
    per_class_iou: dict[int, float]  # NaN for classes absent everywhere
    miou_base: float  # NaN when the split is empty
    miou_novel: float
    miou_all: float


def accumulate_counts(counts: IoUCounts, gt: np.ndarray, pred: np.ndarray) -> None:
    """Add one batch of pixels. `gt` uses eval class ids or BACKGROUND;
    `pred` always holds class ids."""
    gt = np.asarray(gt).ravel()
    pred = np.asarray(pred).ravel()
    if gt.shape != pred.shape:
        raise EvaluationError("prediction and ground truth sizes differ")
    index = {cid: i for i, cid in enumerate(counts.class_ids)}
    for i, cid in enumerate(counts.class_ids):
        is_gt = gt == cid
        is_pred = pred == cid
        counts.tp[i] += int(np.sum(is_gt & is_pred))
        counts.fn[i] += int(np.sum(is_gt & ~is_pred))
        # background ground truth feeds FP here and nothing else
        counts.fp[i] += int(np.sum(~is_gt & is_pred))
    unknown = set(np.unique(gt)) - set(index) - {BACKGROUND}
    if unknown:
        raise EvaluationError(f"ground truth contains unscored ids {sorted(unknown)}")


def _mean_iou(values: list[float]) -> float:
    present = [v for v in values if not np.isnan(v)]
    return float(np.mean(present)) if present else float("nan")


def report_from_counts(counts: IoUCounts, task: int,
                       base_ids: set[int], novel_ids: set[int]) -> MetricsReport:
    per_class = {}
    for i, cid in enumerate(counts.class_ids):
        union = counts.tp[i] + counts.fp[i] + counts.fn[i]
        per_class[cid] = counts.tp[i] / union if union > 0 else float("nan")
    return MetricsReport(
        task=task,
        per_class_iou=per_class,
        miou_base=_mean_iou([v for c, v in per_class.items() if c in base_ids]),
        miou_novel=_mean_iou([v for c, v in per_class.items() if c in novel_ids]),
        miou_all=_mean_iou(list(per_class.values())),
    )
