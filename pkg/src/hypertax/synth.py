"""Deterministic synthetic taxonomic scenes.

Every sample is a nearest-site partition of the grid: one site per final
leaf class plus a few background sites, so every leaf is present in every
sample and background holds a configurable share of pixels. Features are
class means plus isotropic pixel noise; class means accumulate along the
taxonomy (each node adds a Gaussian offset whose scale shrinks with depth),
which makes siblings metrically closer than cross-branch leaves.

All randomness flows from numpy's PCG64 seeded with documented spawn keys
(see STREAM_*), so byte-identical datasets regenerate on any platform.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .protocol import BACKGROUND
from .taxonomy import TaxonomyTree, parse_taxonomy

MAGIC = b"HXTDSET1"
FORMAT_VERSION = 1
PRNG_NAME = "numpy-pcg64"

STREAM_MEANS = 0
STREAM_BACKGROUND = 1
STREAM_SCENE = 2

__all__ = [
    "SynthConfig", "ClassGenerator", "generate_scene", "hierarchy_signal_check",
    "write_dataset", "read_dataset", "Dataset",
]


@dataclass(frozen=True)
class SynthConfig:
    height: int = 24
    width: int = 24
    d_in: int = 16
    train_samples: int = 18
    test_samples: int = 6
    sigma_level: tuple[float, ...] = (4.0, 1.0)
    sigma_pix: float = 1.0
    background_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError("grid must be at least 8x8")
        if any(s <= 0 for s in self.sigma_level):
            raise ValueError("sigma_level entries must be positive")
        if any(b >= a for a, b in zip(self.sigma_level, self.sigma_level[1:])):
            raise ValueError("sigma_level must be strictly decreasing with depth")
        if self.sigma_pix < 0:
            raise ValueError("sigma_pix must be >= 0")
        if not 0.0 < self.background_fraction < 0.5:
            raise ValueError("background_fraction must lie in (0, 0.5)")
        if self.train_samples < 1 or self.test_samples < 1:
            raise ValueError("need at least one train and one test sample")

    @property
    def n_samples(self) -> int:
        return self.train_samples + self.test_samples

    def canonical_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, default=list)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


class ClassGenerator:
    """Per-leaf feature means built by walking the tree from the root."""

    def __init__(self, tree: TaxonomyTree, cfg: SynthConfig):
        if tree.depth > len(cfg.sigma_level):
            raise ValueError(
                f"sigma_level has {len(cfg.sigma_level)} entries but the "
                f"taxonomy has {tree.depth} levels")
        self.tree = tree
        self.cfg = cfg
        rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, STREAM_MEANS)))
        offsets = {}
        for v in tree.class_ids:  # ascending id: deterministic draw order
            level = tree.level(v)
            offsets[v] = rng.normal(0.0, cfg.sigma_level[level - 1], size=cfg.d_in)
        self.means = {}
        for v in tree.class_ids:
            mean = np.zeros(cfg.d_in)
            for u in tree.ancestors(v):
                mean += offsets[u]
            self.means[v] = mean
        bg_rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, STREAM_BACKGROUND)))
        self.background_mean = bg_rng.normal(0.0, cfg.sigma_level[0], size=cfg.d_in)

    def mean_of(self, label: int) -> np.ndarray:
        if label == BACKGROUND:
            return self.background_mean
        return self.means[label]


def hierarchy_signal_check(gen: ClassGenerator) -> dict:
    """Verify siblings sit closer together than cross-branch leaves."""
    tree = gen.tree
    leaves = tree.leaves
    intra, inter = [], []
    branch_of = {leaf: tree.ancestors(leaf)[-1] for leaf in leaves}
    for i, a in enumerate(leaves):
        for b in leaves[i + 1:]:
            d = float(np.linalg.norm(gen.means[a] - gen.means[b]))
            if tree.node(a).parent == tree.node(b).parent:
                intra.append(d)
            elif branch_of[a] != branch_of[b]:
                inter.append(d)
    report = {
        "mean_sibling_distance": float(np.mean(intra)) if intra else 0.0,
        "mean_cross_branch_distance": float(np.mean(inter)) if inter else float("inf"),
    }
    report["ratio"] = report["mean_sibling_distance"] / report["mean_cross_branch_distance"]
    if intra and inter and report["ratio"] >= 1.0:
        raise ValueError(
            "taxonomy is not metrically real: sibling leaves are further apart "
            f"than cross-branch leaves (ratio {report['ratio']:.3f}); increase "
            "the gap between sigma_level entries")
    return report


def _scene_sites(rng, cfg: SynthConfig, n_leaves: int):
    n_bg = max(1, round(cfg.background_fraction * n_leaves
                        / (1.0 - cfg.background_fraction)))
    n_sites = n_leaves + n_bg
    cells = rng.choice(cfg.height * cfg.width, size=n_sites, replace=False)
    return np.stack([cells // cfg.width, cells % cfg.width], axis=1), n_bg


def generate_scene(cfg: SynthConfig, tree: TaxonomyTree, gen: ClassGenerator,
                   sample_index: int) -> tuple[np.ndarray, np.ndarray]:
    """(features HxWxd, leaf-label grid HxW) for one sample, fully
    determined by (cfg.seed, sample_index)."""
    rng = np.random.default_rng(
        np.random.SeedSequence((cfg.seed, STREAM_SCENE, sample_index)))
    leaves = tree.leaves
    rows = np.arange(cfg.height)[:, None]
    cols = np.arange(cfg.width)[None, :]
    lo = cfg.background_fraction - 0.1
    hi = cfg.background_fraction + 0.1
    for _ in range(200):
        sites, n_bg = _scene_sites(rng, cfg, len(leaves))
        site_labels = np.asarray(leaves + [BACKGROUND] * n_bg)
        d2 = (rows[..., None] - sites[:, 0]) ** 2 + (cols[..., None] - sites[:, 1]) ** 2
        labels = site_labels[np.argmin(d2, axis=-1)]
        bg_share = float(np.mean(labels == BACKGROUND))
        covered = len(np.unique(labels)) == len(leaves) + 1
        if covered and lo <= bg_share <= hi:
            break
    else:
        raise ValueError(
            "could not draw a scene satisfying the background share; "
            "adjust background_fraction or the grid size")
    means = np.empty((cfg.height, cfg.width, cfg.d_in))
    for label in np.unique(labels):
        means[labels == label] = gen.mean_of(int(label))
    noise = rng.normal(0.0, cfg.sigma_pix, size=means.shape) if cfg.sigma_pix > 0 \
        else 0.0
    return means + noise, labels.astype(np.int32)


@dataclass
class Dataset:
    cfg: SynthConfig
    tree: TaxonomyTree
    features: np.ndarray  # (n_samples, H, W, d_in) float64
    labels: np.ndarray  # (n_samples, H, W) int32
    header: dict = field(default_factory=dict)

    @property
    def train(self):
        n = self.cfg.train_samples
        return self.features[:n], self.labels[:n]

    @property
    def test(self):
        n = self.cfg.train_samples
        return self.features[n:], self.labels[n:]


def build_dataset(cfg: SynthConfig, tree: TaxonomyTree) -> Dataset:
    gen = ClassGenerator(tree, cfg)
    hierarchy_signal_check(gen)
    feats, labs = [], []
    for i in range(cfg.n_samples):
        f, l = generate_scene(cfg, tree, gen, i)
        feats.append(f)
        labs.append(l)
    return Dataset(cfg=cfg, tree=tree,
                   features=np.stack(feats), labels=np.stack(labs))


def write_dataset(path, ds: Dataset) -> None:
    """Byte layout: MAGIC, u32-LE header length, canonical JSON header,
    then per sample the feature grid (<f8, C order) and label grid (<i4)."""
    header = {
        "format_version": FORMAT_VERSION,
        "prng": PRNG_NAME,
        "seed": ds.cfg.seed,
        "config": json.loads(ds.cfg.canonical_json()),
        "config_hash": ds.cfg.config_hash(),
        "taxonomy_text": ds.tree.to_text(),
        "taxonomy_structural_hash": ds.tree.structural_hash(),
        "n_samples": ds.cfg.n_samples,
        "train_samples": ds.cfg.train_samples,
        "test_samples": ds.cfg.test_samples,
        "height": ds.cfg.height,
        "width": ds.cfg.width,
        "d_in": ds.cfg.d_in,
        "feature_dtype": "<f8",
        "label_dtype": "<i4",
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for i in range(ds.cfg.n_samples):
            fh.write(np.ascontiguousarray(ds.features[i], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(ds.labels[i], dtype="<i4").tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a hypertax dataset file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(
                f"unsupported dataset format version {header['format_version']}")
        h, w, d = header["height"], header["width"], header["d_in"]
        n = header["n_samples"]
        feats = np.empty((n, h, w, d))
        labs = np.empty((n, h, w), dtype=np.int32)
        for i in range(n):
            feats[i] = np.frombuffer(fh.read(h * w * d * 8), dtype="<f8").reshape(h, w, d)
            labs[i] = np.frombuffer(fh.read(h * w * 4), dtype="<i4").reshape(h, w)
    cfg = SynthConfig(**{k: tuple(v) if isinstance(v, list) else v
                         for k, v in header["config"].items()})
    tree = parse_taxonomy(header["taxonomy_text"])
    return Dataset(cfg=cfg, tree=tree, features=feats, labels=labs, header=header)
