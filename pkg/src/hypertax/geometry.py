"""Poincare-ball geometry kernel.

All functions operate on float64 arrays whose last axis is the embedding
dimension, broadcast like numpy, and are pure. The ball of curvature c > 0
is {x : c * ||x||^2 < 1}; points is kept strictly inside it by clipping to
norm (1 - EPS_BALL) / sqrt(c).
"""

from __future__ import annotations

import numpy as np

EPS_BALL = 1e-5
# floor for the 1 - c||z||^2 factor inside the signed-distance argument;
# never binds for clipped points (their factor is >= ~2e-5)
DENOM_FLOOR = 1e-12

__all__ = [
    "EPS_BALL", "DENOM_FLOOR", "max_norm",
    "conformal_factor", "mobius_add", "exp0", "log0",
    "signed_distance", "project_to_ball",
]


def _check_curvature(c: float) -> float:
    c = float(c)
    if not np.isfinite(c) or c <= 0:
        raise ValueError(f"curvature must be a positive real, got {c}")
    return c


def _check_finite(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite entries")
    return x


def _check_inside(x: np.ndarray, c: float, what: str) -> np.ndarray:
    x = _check_finite(x, what)
    if np.any(c * np.sum(x * x, axis=-1) >= 1.0):
        raise ValueError(f"{what} lies on or outside the curvature-{c} ball")
    return x


def max_norm(c: float) -> float:
    """Largest norm a point may have after clipping."""
    return (1.0 - EPS_BALL) / np.sqrt(_check_curvature(c))


def project_to_ball(x, c: float) -> np.ndarray:
    """Rescale any point with norm >= (1 - EPS_BALL)/sqrt(c) back onto that shell."""
    c = _check_curvature(c)
    x = _check_finite(x, "point")
    limit = (1.0 - EPS_BALL) / np.sqrt(c)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.where(norm >= limit, limit / np.maximum(norm, 1e-300), 1.0)
    return x * scale


def conformal_factor(x, c: float):
    """lambda_x^c = 2 / (1 - c ||x||^2); >= 2 on the ball interior."""
    c = _check_curvature(c)
    x = _check_inside(x, c, "point")
    return 2.0 / (1.0 - c * np.sum(x * x, axis=-1))


def mobius_add(v, w, c: float) -> np.ndarray:
    """Gyrogroup addition v (+)_c w, re-projected into the ball."""
    c = _check_curvature(c)
    v = _check_inside(v, c, "left operand")
    w = _check_inside(w, c, "right operand")
    vw = np.sum(v * w, axis=-1, keepdims=True)
    v2 = np.sum(v * v, axis=-1, keepdims=True)
    w2 = np.sum(w * w, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * c * vw + c * w2) * v + (1.0 - c * v2) * w
    den = 1.0 + 2.0 * c * vw + c * c * v2 * w2
    return project_to_ball(num / den, c)


def exp0(e, c: float) -> np.ndarray:
    """Exponential map at the origin: tanh(sqrt(c)||e||) e / (sqrt(c)||e||).

    The result norm is exactly tanh(sqrt(c)||e||)/sqrt(c), not clipped to the
    stability shell: clipping there would destroy log0 roundtrips for points
    that legitimately live closer to the boundary than EPS_BALL. Internal
    scalars run in extended precision so the roundtrip survives near the
    boundary; only the final cast to float64 rounds.
    """
    c = _check_curvature(c)
    e = _check_finite(e, "tangent vector")
    el = np.asarray(e, dtype=np.longdouble)
    sc = np.sqrt(np.longdouble(c))
    norm = np.sqrt(np.sum(el * el, axis=-1, keepdims=True))
    t = sc * np.maximum(norm, np.longdouble(1e-300))
    # tanh(t)/t -> 1 as t -> 0, which the clamped ratio reproduces exactly
    h = (el * (np.tanh(t) / t)).astype(np.float64)
    # for enormous inputs tanh rounds to 1; keep the result strictly inside
    s2 = c * np.sum(h * h, axis=-1, keepdims=True)
    if np.any(s2 >= 1.0):
        shell = (1.0 - EPS_BALL) / np.sqrt(c)
        norm64 = np.linalg.norm(h, axis=-1, keepdims=True)
        h = np.where(s2 >= 1.0, h * (shell / norm64), h)
    return h


def log0(h, c: float) -> np.ndarray:
    """Inverse of exp0: artanh(sqrt(c)||h||) h / (sqrt(c)||h||)."""
    c = _check_curvature(c)
    h = _check_inside(h, c, "point")
    hl = np.asarray(h, dtype=np.longdouble)
    sc = np.sqrt(np.longdouble(c))
    norm = np.sqrt(np.sum(hl * hl, axis=-1, keepdims=True))
    t = sc * np.maximum(norm, np.longdouble(1e-300))
    return (hl * (np.arctanh(t) / t)).astype(np.float64)


def signed_distance(h, o, r, c: float):
    """Signed distance of point h to the hyperplane with offset o, orientation r.

    zeta = (lambda_o^c ||r|| / sqrt(c))
           * asinh( 2 sqrt(c) <(-o) (+)_c h, r> / ((1 - c||(-o) (+)_c h||^2) ||r||) )
    """
    c = _check_curvature(c)
    h = _check_inside(h, c, "feature point")
    o = _check_inside(o, c, "hyperplane offset")
    r = _check_finite(r, "hyperplane orientation")
    r_norm = np.linalg.norm(r, axis=-1)
    if np.any(r_norm == 0.0):
        raise ValueError("degenerate hyperplane: zero orientation vector")
    z = mobius_add(-o, h, c)
    zr = np.sum(z * r, axis=-1)
    z2 = np.sum(z * z, axis=-1)
    sc = np.sqrt(c)
    arg = 2.0 * sc * zr / (np.maximum(1.0 - c * z2, DENOM_FLOOR) * r_norm)
    lam = 2.0 / (1.0 - c * np.sum(o * o, axis=-1))
    return lam * r_norm / sc * np.arcsinh(arg)
