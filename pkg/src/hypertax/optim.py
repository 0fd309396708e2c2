"""Riemannian SGD for the hyperbolic classifier, plus the poly LR schedule.

Feature-map weights and hyperplane orientations are ordinary Euclidean
parameters and get plain SGD with momentum and weight decay. Ball offsets
get the Riemannian update: the Euclidean gradient is rescaled by the
inverse squared conformal factor, (1 - c ||o||^2)^2 / 4, then the point is
moved and re-projected into the ball. Momentum for offsets accumulates the
rescaled gradients (no transport); weight decay is not applied to them.
"""

from __future__ import annotations

import numpy as np

from .geometry import project_to_ball
from .model import HyperbolicClassifier

__all__ = ["TrainingError", "RiemannianSGD", "poly_lr"]


class TrainingError(RuntimeError):
    pass


def poly_lr(iteration: int, max_iter: int, lr0: float, power: float = 0.9) -> float:
    """lr0 * (1 - iteration/max_iter)^power."""
    if not 0 <= iteration <= max_iter:
        raise TrainingError(
            f"iteration {iteration} outside schedule range [0, {max_iter}]")
    return lr0 * (1.0 - iteration / max_iter) ** power


class RiemannianSGD:
    def __init__(self, model: HyperbolicClassifier, momentum: float = 0.9,
                 weight_decay: float = 1e-4):
        self.model = model
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self._buffers: dict[str, np.ndarray] = {}

    def _buffer(self, name: str, like: np.ndarray) -> np.ndarray:
        buf = self._buffers.get(name)
        if buf is None or buf.shape != like.shape:
            grown = np.zeros_like(like)
            if buf is not None:  # head grew; keep old momentum rows
                grown[: buf.shape[0]] = buf
            buf = grown
            self._buffers[name] = buf
        return buf

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {name}; step aborted")
        params = self.model.parameters()
        c = self.model.curvature
        updated = {}
        for name, theta in params.items():
            g = grads[name]
            if name == "head.offsets":
                scale = (1.0 - c * np.sum(theta * theta, axis=-1, keepdims=True)) ** 2 / 4.0
                d = g * scale
            else:
                d = g + self.weight_decay * theta
            buf = self._buffer(name, theta)
            buf *= self.momentum
            buf += d
            new = theta - lr * buf
            if name == "head.offsets":
                new = project_to_ball(new, c)
            updated[name] = new
        self.model.set_parameters(updated)
