"""Trainable model: small feature map composed with a hyperbolic head.

The head holds one hyperplane (offset on the ball, Euclidean orientation)
per taxonomy node. `_forward` is written against the autodiff dispatch ops,
so the same code runs as a plain numpy evaluation (`scores`, `embed`,
`predict`) and as a differentiable tape during training
(`tape_parameters` + `_forward`).

Score-matrix columns follow head insertion order: base nodes by ascending
id, then each expansion's nodes appended. Expanding the head appends
columns and never touches existing parameters.
"""

from __future__ import annotations

import copy
import json

import numpy as np

from . import autodiff as ad
from .geometry import DENOM_FLOOR, project_to_ball
from .taxonomy import TaxonomyTree, parse_taxonomy

CHECKPOINT_FORMAT = "hypertax-checkpoint-v1"

# fresh hyperplanes start near the ball center: tight Gaussian offsets,
# orientations at the usual 1/sqrt(n) scale
SIGMA_OFFSET_INIT = 0.01

__all__ = [
    "FeatureMap", "HyperbolicClassifier", "gradients", "node_logits",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
    "SIGMA_OFFSET_INIT",
]


class CheckpointError(RuntimeError):
    pass


class FeatureMap:
    """Fully-connected map d_in -> ... -> n with tanh between layers,
    linear output (the output is a tangent vector, unconstrained).

    Init keeps the model trainable at desk scale: the first layer is damped
    so tanh stays in its linear range for few-unit inputs, and the output
    layer is damped so initial embeddings start near the ball center
    instead of pinned against the boundary.
    """

    FIRST_LAYER_DAMP = 0.5
    OUTPUT_LAYER_DAMP = 0.1

    def __init__(self, widths: list[int], rng: np.random.Generator,
                 max_tangent_norm: float = 2.0):
        if len(widths) < 2:
            raise ValueError("feature map needs at least input and output widths")
        if max_tangent_norm <= 0:
            raise ValueError("max_tangent_norm must be positive")
        self.widths = list(widths)
        self.max_tangent_norm = float(max_tangent_norm)
        self.weights = []
        self.biases = []
        last = len(widths) - 2
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            scale = 1.0 / np.sqrt(fan_in)
            if i == 0:
                scale *= self.FIRST_LAYER_DAMP
            if i == last:
                scale *= self.OUTPUT_LAYER_DAMP
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def param_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"fm.w{i}"] = w
            out[f"fm.b{i}"] = b
        return out

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = params[f"fm.w{i}"]
            self.biases[i] = params[f"fm.b{i}"]


def _apply_feature_map(x, params, n_layers, max_norm):
    h = x
    for i in range(n_layers):
        h = ad.matmul(h, params[f"fm.w{i}"]) + params[f"fm.b{i}"]
        if i < n_layers - 1:
            h = ad.tanh(h)
    # radial squash: tangent norms saturate smoothly at max_norm, which keeps
    # embeddings off the ball boundary where distance gradients blow up
    norm = ad.sqrt(ad.maximum(ad.vsum(h * h, axis=-1, keepdims=True), 1e-300))
    return h * (max_norm * ad.tanh(norm / max_norm) / norm)


def _exp0(e, c):
    sc = np.sqrt(c)
    norm = ad.sqrt(ad.maximum(ad.vsum(e * e, axis=-1, keepdims=True), 1e-300))
    t = sc * norm
    return e * (ad.tanh(t) / t)


def node_logits(h, offsets, orients, c):
    """Signed distances of each embedded point to every node hyperplane.

    h: (N, n); offsets, orients: (V, n). Returns (N, V).
    """
    sc = np.sqrt(c)
    v = -ad.expand_dims(offsets, 0)  # (1, V, n)
    w = ad.expand_dims(h, 1)  # (N, 1, n)
    vw = ad.vsum(v * w, axis=-1, keepdims=True)
    v2 = ad.vsum(v * v, axis=-1, keepdims=True)
    w2 = ad.vsum(w * w, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * c * vw + c * w2) * v + (1.0 - c * v2) * w
    den = 1.0 + 2.0 * c * vw + (c * c) * v2 * w2
    z = num / den  # (N, V, n)
    zr = ad.vsum(z * ad.expand_dims(orients, 0), axis=-1)  # (N, V)
    z2 = ad.vsum(z * z, axis=-1)
    r_norm = ad.sqrt(ad.vsum(orients * orients, axis=-1))  # (V,)
    arg = 2.0 * sc * zr / (ad.maximum(1.0 - c * z2, DENOM_FLOOR) * r_norm)
    lam = 2.0 / (1.0 - c * ad.vsum(offsets * offsets, axis=-1))  # (V,)
    return (lam * r_norm / sc) * ad.asinh(arg)


class HyperbolicClassifier:
    """Feature map + one hyperplane per taxonomy node at curvature c."""

    def __init__(self, tree: TaxonomyTree, feature_widths: list[int],
                 curvature: float, rng: np.random.Generator,
                 max_tangent_norm: float = 2.0):
        if curvature <= 0:
            raise ValueError("curvature must be positive")
        self.tree = tree
        self.curvature = float(curvature)
        self.feature_map = FeatureMap(feature_widths, rng, max_tangent_norm)
        self.embed_dim = feature_widths[-1]
        self.node_order: list[int] = list(tree.class_ids)
        self.columns: dict[int, int] = {v: i for i, v in enumerate(self.node_order)}
        n_nodes = len(self.node_order)
        self.offsets = project_to_ball(
            rng.normal(0.0, SIGMA_OFFSET_INIT, size=(n_nodes, self.embed_dim)),
            self.curvature)
        self.orients = rng.normal(0.0, 1.0 / np.sqrt(self.embed_dim),
                                  size=(n_nodes, self.embed_dim))

    # -- parameters -----------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        out = self.feature_map.param_dict()
        out["head.offsets"] = self.offsets
        out["head.orients"] = self.orients
        return out

    def tape_parameters(self) -> dict[str, ad.Tensor]:
        return {k: ad.Tensor(v) for k, v in self.parameters().items()}

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        self.feature_map.set_params(params)
        self.offsets = params["head.offsets"]
        self.orients = params["head.orients"]

    @property
    def n_layers(self) -> int:
        return len(self.feature_map.weights)

    # -- forward ----------------------------------------------------------

    def _forward(self, x, params):
        """(embedding, per-node sigmoid scores); works on arrays or Tensors."""
        e = _apply_feature_map(x, params, self.n_layers,
                               self.feature_map.max_tangent_norm)
        h = _exp0(e, self.curvature)
        zeta = node_logits(h, params["head.offsets"], params["head.orients"],
                            self.curvature)
        return h, ad.sigmoid(zeta)

    def scores(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.feature_map.widths[0]:
            raise ValueError(
                f"expected features of shape (N, {self.feature_map.widths[0]}), "
                f"got {x.shape}")
        return self._forward(x, self.parameters())[1]

    def embed(self, x: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(x, dtype=np.float64), self.parameters())[0]

    # -- inference ----------------------------------------------------------

    def leaf_products(self, scores: np.ndarray) -> tuple[np.ndarray, list[int]]:
        """Per-leaf product of the leaf's own score and all ancestor scores."""
        leaves = self.tree.leaves
        prods = np.empty((scores.shape[0], len(leaves)))
        for j, leaf in enumerate(leaves):
            cols = [self.columns[v] for v in self.tree.ancestors(leaf)]
            prods[:, j] = np.prod(scores[:, cols], axis=1)
        return prods, leaves

    def predict_leaf(self, scores: np.ndarray) -> np.ndarray:
        """Most likely leaf per row: argmax of the ancestor-product scores.
        Internal nodes never win; they only contribute factors."""
        prods, leaves = self.leaf_products(scores)
        return np.asarray(leaves)[np.argmax(prods, axis=1)]

    def predict_leaf_flat(self, scores: np.ndarray) -> np.ndarray:
        """Ablation path: argmax over raw leaf scores, hierarchy ignored."""
        leaves = self.tree.leaves
        cols = [self.columns[v] for v in leaves]
        return np.asarray(leaves)[np.argmax(scores[:, cols], axis=1)]

    def predict(self, x: np.ndarray, use_hierarchy: bool = True) -> np.ndarray:
        scores = self.scores(x)
        if use_hierarchy:
            return self.predict_leaf(scores)
        return self.predict_leaf_flat(scores)

    # -- class expansion ------------------------------------------------

    def add_classes(self, new_tree: TaxonomyTree, rng: np.random.Generator,
                    new_ids: list[int] | None = None) -> None:
        """Grow the head to cover `new_tree`. Existing rows are kept
        untouched; new nodes draw fresh parameters. Passing `new_ids`
        asserts exactly which nodes are expected to be fresh."""
        if new_ids is not None:
            for v in new_ids:
                if v in self.columns:
                    raise ValueError(
                        f"node {new_tree.name(v)!r} already has parameters")
        new_ids = [v for v in new_tree.class_ids if v not in self.columns]
        missing = [v for v in self.node_order if v not in new_tree.class_ids]
        if missing:
            raise ValueError(f"new taxonomy drops nodes {missing}")
        self.tree = new_tree
        if not new_ids:
            return
        fresh_off = project_to_ball(
            rng.normal(0.0, SIGMA_OFFSET_INIT, size=(len(new_ids), self.embed_dim)),
            self.curvature)
        fresh_ori = rng.normal(0.0, 1.0 / np.sqrt(self.embed_dim),
                               size=(len(new_ids), self.embed_dim))
        self.offsets = np.concatenate([self.offsets, fresh_off], axis=0)
        self.orients = np.concatenate([self.orients, fresh_ori], axis=0)
        for v in sorted(new_ids):
            self.columns[v] = len(self.node_order)
            self.node_order.append(v)

    def snapshot(self) -> "HyperbolicClassifier":
        """Deep frozen copy for pseudo-labeling and regularization."""
        return copy.deepcopy(self)


def gradients(model: HyperbolicClassifier, loss_fn):
    """Evaluate `loss_fn(params)` on the tape and return (value, grads).

    `loss_fn` receives the model's parameters as tape tensors and must
    return a scalar tensor. Parameters the loss never touches get zero
    gradients.
    """
    params = model.tape_parameters()
    loss = loss_fn(params)
    if not ad.is_tensor(loss):
        # loss did not touch any parameter; gradients are identically zero
        return float(loss), {k: np.zeros_like(t.data) for k, t in params.items()}
    ad.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for k, t in params.items()}
    return float(loss.data), grads


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: HyperbolicClassifier, path, meta: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "curvature": model.curvature,
        "max_tangent_norm": model.feature_map.max_tangent_norm,
        "feature_widths": model.feature_map.widths,
        "node_order": model.node_order,
        "taxonomy_text": model.tree.to_text(),
        "taxonomy_hash": model.tree.full_hash(),
        "params": {k: v.tolist() for k, v in model.parameters().items()},
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path, expected_taxonomy: TaxonomyTree | None = None):
    """Rebuild a model from disk. If `expected_taxonomy` is given, its hash
    must match the one stored at save time."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {payload.get('format')!r}")
    tree = parse_taxonomy(payload["taxonomy_text"])
    if tree.full_hash() != payload["taxonomy_hash"]:
        raise CheckpointError("checkpoint taxonomy does not match its stored hash")
    if expected_taxonomy is not None and \
            expected_taxonomy.full_hash() != payload["taxonomy_hash"]:
        raise CheckpointError(
            "checkpoint was trained on a different taxonomy than configured")
    model = HyperbolicClassifier(tree, payload["feature_widths"],
                                 payload["curvature"],
                                 np.random.default_rng(0),
                                 payload.get("max_tangent_norm", 2.0))
    if sorted(payload["node_order"]) != tree.class_ids:
        raise CheckpointError("checkpoint node order is inconsistent")
    model.node_order = list(payload["node_order"])
    model.columns = {v: i for i, v in enumerate(model.node_order)}
    model.set_parameters(
        {k: np.asarray(v, dtype=np.float64) for k, v in payload["params"].items()})
    return model, payload["meta"]
