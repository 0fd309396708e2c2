import math

import numpy as np
import pytest

from hypertax.losses import (
    HierLossConfig, TreeIndex, build_label_batch, hier_loss, level_ce_loss,
    tree_min_loss,
)
from hypertax.taxonomy import parse_taxonomy

FLOOR = 1e-7

TWO_BRANCH = """
A ROOT
B ROOT
a1 A
a2 A
"""


# -- reference implementations: deliberately naive double loops ---------------

def naive_tree_min(scores, label, tree, floor=FLOOR):
    positives = set(tree.ancestors(label))
    total = 0.0
    for v in tree.class_ids:
        if v in positives:
            weakest = min(scores[u] for u in tree.ancestors(v))
            total += -math.log(max(weakest, floor))
        else:
            strongest = max(scores[u] for u in tree.descendants(v))
            total += -math.log(max(1.0 - strongest, floor))
    return total


def naive_level_ce(scores, label, tree, floor=FLOOR):
    sprime = {v: max(scores[u] for u in tree.descendants(v)) for v in tree.class_ids}
    path = tree.ancestors(label)
    total = 0.0
    for level in range(1, tree.level(label) + 1):
        nodes = tree.nodes_at_level(level)
        if len(nodes) < 2:
            continue
        gt = next(u for u in path if tree.level(u) == level)
        mass = sprime[gt] / sum(sprime[v] for v in nodes)
        total += -math.log(max(mass, floor))
    return total


def random_tree(rng, max_nodes=25):
    n = int(rng.integers(1, max_nodes + 1))
    lines = []
    names = []
    for i in range(n):
        parent = "ROOT" if not names or rng.random() < 0.3 else \
            names[int(rng.integers(0, len(names)))]
        name = f"n{i}"
        lines.append(f"{name} {parent}")
        names.append(name)
    return parse_taxonomy("\n".join(lines))


def random_scores(rng, tree):
    return {v: float(rng.uniform(0.01, 0.99)) for v in tree.class_ids}


# -- frozen hand values -------------------------------------------------------

def test_tree_min_hand_example():
    tree = parse_taxonomy(TWO_BRANCH)
    scores = {tree.id_of("A"): 0.9, tree.id_of("a1"): 0.8,
              tree.id_of("B"): 0.2, tree.id_of("a2"): 0.1}
    got = tree_min_loss(scores, tree.id_of("a1"), tree)
    want = -(math.log(0.9) + math.log(0.8) + math.log(0.8) + math.log(0.9))
    assert abs(got - 0.65700) < 1e-5
    assert abs(got - want) < 1e-12


def test_tree_min_perfect_scores_near_zero():
    tree = parse_taxonomy(TWO_BRANCH)
    delta = FLOOR
    on_path = set(tree.ancestors(tree.id_of("a1")))
    scores = {v: (1.0 - delta if v in on_path else delta) for v in tree.class_ids}
    loss = tree_min_loss(scores, tree.id_of("a1"), tree)
    assert 0.0 <= loss <= len(tree.class_ids) * (-math.log(1.0 - delta)) + 1e-12


def test_flat_tree_reduces_to_bce():
    tree = parse_taxonomy("x ROOT\ny ROOT\nz ROOT\n")
    rng = np.random.default_rng(0)
    for _ in range(20):
        scores = random_scores(rng, tree)
        label = tree.leaves[int(rng.integers(0, 3))]
        bce = sum(
            -math.log(scores[v]) if v == label else -math.log(1.0 - scores[v])
            for v in tree.class_ids)
        assert abs(tree_min_loss(scores, label, tree) - bce) < 1e-12
        # per-level CE on one level == sum-normalized CE over the raw scores
        total = sum(scores.values())
        ce = -math.log(scores[label] / total)
        assert abs(level_ce_loss(scores, label, tree) - ce) < 1e-12


def test_level_ce_hand_values():
    # one level, two nodes: normalized mass of the true node
    tree = parse_taxonomy("x ROOT\ny ROOT\n")
    scores = {tree.id_of("x"): 0.8, tree.id_of("y"): 0.2}
    got = level_ce_loss(scores, tree.id_of("x"), tree)
    assert abs(got - 0.22314) < 1e-5
    assert abs(got - (-math.log(0.8))) < 1e-12

    single = parse_taxonomy("only ROOT\n")
    assert level_ce_loss({single.id_of("only"): 0.7},
                         single.id_of("only"), single) == 0.0


def test_level_ce_sibling_descendant_pressure():
    tree = parse_taxonomy(TWO_BRANCH)
    scores = {tree.id_of("A"): 0.9, tree.id_of("a1"): 0.8,
              tree.id_of("B"): 0.2, tree.id_of("a2"): 0.1}
    base = level_ce_loss(scores, tree.id_of("a1"), tree)
    bumped = dict(scores)
    bumped[tree.id_of("a2")] = 0.6  # sibling's subtree gets more confident
    assert level_ce_loss(bumped, tree.id_of("a1"), tree) > base


def test_tree_min_true_path_pressure():
    tree = parse_taxonomy(TWO_BRANCH)
    scores = {tree.id_of("A"): 0.9, tree.id_of("a1"): 0.8,
              tree.id_of("B"): 0.2, tree.id_of("a2"): 0.1}
    base = tree_min_loss(scores, tree.id_of("a1"), tree)
    dropped = dict(scores)
    dropped[tree.id_of("A")] = 0.5  # ancestor falls below the leaf score
    assert tree_min_loss(dropped, tree.id_of("a1"), tree) > base


def test_hier_loss_weighting():
    tree = parse_taxonomy(TWO_BRANCH)
    rng = np.random.default_rng(1)
    index = TreeIndex(tree)
    for _ in range(10):
        scores = random_scores(rng, tree)
        label = tree.leaves[int(rng.integers(0, len(tree.leaves)))]
        row = np.array([[scores[v] for v in sorted(scores)]])
        tm = tree_min_loss(scores, label, tree)
        ce = level_ce_loss(scores, label, tree)
        assert abs(hier_loss(row, [label], tree, HierLossConfig(1.0, 0.0)) - tm) < 1e-12
        assert abs(hier_loss(row, [label], tree, HierLossConfig(0.0, 1.0)) - ce) < 1e-12
        combined = hier_loss(row, [label], tree, HierLossConfig(5.0, 1.0))
        assert abs(combined - (5.0 * tm + ce)) < 1e-12
    del index


def test_hier_loss_hand_example_weighted():
    tree = parse_taxonomy(TWO_BRANCH)
    scores = {tree.id_of("A"): 0.9, tree.id_of("a1"): 0.8,
              tree.id_of("B"): 0.2, tree.id_of("a2"): 0.1}
    row = np.array([[scores[v] for v in sorted(scores)]])
    label = tree.id_of("a1")
    got = hier_loss(row, [label], tree, HierLossConfig(5.0, 1.0))
    want = 5.0 * naive_tree_min(scores, label, tree) + \
        naive_level_ce(scores, label, tree)
    assert abs(got - want) < 1e-12
    assert abs(5.0 * 0.65700 - 5.0 * naive_tree_min(scores, label, tree)) < 5e-5


def test_hier_loss_batch_average():
    tree = parse_taxonomy(TWO_BRANCH)
    rng = np.random.default_rng(2)
    cfg = HierLossConfig(5.0, 1.0)
    labels = [tree.id_of("a1"), tree.id_of("B"), tree.id_of("a2")]
    rows = []
    per_pixel = []
    for label in labels:
        scores = random_scores(rng, tree)
        rows.append([scores[v] for v in sorted(scores)])
        per_pixel.append(5.0 * naive_tree_min(scores, label, tree)
                         + naive_level_ce(scores, label, tree))
    got = hier_loss(np.array(rows), labels, tree, cfg)
    assert abs(got - np.mean(per_pixel)) < 1e-12


def test_oracle_equivalence_random_trees():
    rng = np.random.default_rng(3)
    for _ in range(300):
        tree = random_tree(rng)
        scores = random_scores(rng, tree)
        label = tree.leaves[int(rng.integers(0, len(tree.leaves)))]
        tm = tree_min_loss(scores, label, tree)
        ce = level_ce_loss(scores, label, tree)
        assert tm == naive_tree_min(scores, label, tree)
        assert ce == naive_level_ce(scores, label, tree)
        assert tm >= 0.0 and ce >= 0.0


def test_internal_pseudo_label_expansion():
    # pseudo-labels may name a node that has since become internal
    tree = parse_taxonomy(TWO_BRANCH)
    index = TreeIndex(tree)
    batch = build_label_batch([tree.id_of("A")], index)
    a_col = index.columns[tree.id_of("A")]
    assert batch.positives[0, a_col] == 1.0
    assert batch.positives[0].sum() == 1.0  # A is top-level: single positive


def test_config_validation():
    with pytest.raises(ValueError):
        HierLossConfig(0.0, 0.0)
    with pytest.raises(ValueError):
        HierLossConfig(1.0, 1.0, score_floor=0.7)
    with pytest.raises(ValueError):
        HierLossConfig(-1.0, 1.0)


def test_missing_score_rejected():
    tree = parse_taxonomy(TWO_BRANCH)
    scores = {tree.id_of("A"): 0.9}
    with pytest.raises(ValueError, match="missing"):
        tree_min_loss(scores, tree.id_of("A"), tree)
