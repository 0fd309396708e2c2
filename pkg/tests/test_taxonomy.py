from pathlib import Path

import pytest

from hypertax.taxonomy import (
    ROOT_ID, TaxonomyError, descendants_brute_force, load_taxonomy,
    parse_taxonomy,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = """
A ROOT
B ROOT
a1 A
a2 A
"""


def small_tree():
    return parse_taxonomy(SMALL)


def test_ancestors_are_reflexive_and_rootward():
    tree = small_tree()
    a1 = tree.id_of("a1")
    assert [tree.name(v) for v in tree.ancestors(a1)] == ["a1", "A"]
    assert [tree.name(v) for v in tree.ancestors(tree.id_of("A"))] == ["A"]
    with pytest.raises(TaxonomyError):
        tree.ancestors(999)


def test_descendants_are_reflexive():
    tree = small_tree()
    a1, a = tree.id_of("a1"), tree.id_of("A")
    assert tree.descendants(a1) == {a1}
    assert tree.descendants(a) == {a, a1, tree.id_of("a2")}
    with pytest.raises(TaxonomyError):
        tree.descendants(999)


def test_descendants_match_brute_force_dfs():
    tree = load_taxonomy(CONFIGS / "cityscapes_h6.txt")
    for v in tree.class_ids:
        assert tree.descendants(v) == descendants_brute_force(tree, v)
        assert len(tree.descendants(tree.children(ROOT_ID)[0])) == \
            len(descendants_brute_force(tree, tree.children(ROOT_ID)[0]))


def test_ancestor_descendant_intersection_is_self():
    tree = load_taxonomy(CONFIGS / "cityscapes_h6.txt")
    for v in tree.class_ids:
        assert set(tree.ancestors(v)) & tree.descendants(v) == {v}


def test_leaf_pair_common_ancestor():
    tree = small_tree()
    a1, a2 = tree.id_of("a1"), tree.id_of("a2")
    common = set(tree.ancestors(a1)) & set(tree.ancestors(a2))
    assert tree.id_of("A") in common


def test_cityscapes_tree_shape():
    tree = load_taxonomy(CONFIGS / "cityscapes_h6.txt")
    assert len(tree.leaves) == 19
    assert tree.depth == 6
    train = tree.id_of("train")
    assert tree.level(train) == 6
    assert len(tree.ancestors(train)) == 6


def test_expand_label():
    tree = small_tree()
    a1 = tree.id_of("a1")
    exp = tree.expand_label(a1)
    assert exp.positives == {a1, tree.id_of("A")}
    assert exp.per_level == {1: tree.id_of("A"), 2: a1}
    b = tree.expand_label(tree.id_of("B"))
    assert b.positives == {tree.id_of("B")}
    with pytest.raises(TaxonomyError):
        tree.expand_label(tree.id_of("A"))


def test_expand_label_consistent_with_ancestors_everywhere():
    tree = load_taxonomy(CONFIGS / "cityscapes_h6.txt")
    total = 0
    for leaf in tree.leaves:
        exp = tree.expand_label(leaf)
        assert exp.positives == set(tree.ancestors(leaf))
        assert len(exp.positives) == tree.level(leaf)
        total += len(exp.positives)
    # independent count: walk every root path step by step
    walked = 0
    for leaf in tree.leaves:
        v = leaf
        while v != ROOT_ID:
            walked += 1
            v = tree.node(v).parent
    assert total == walked


def test_insert_leaf_under_internal_node():
    tree = small_tree()
    grown = tree.insert_subtree(tree.id_of("A"), [("a3", "A")], task=2)
    assert len(grown.leaves) == len(tree.leaves) + 1
    assert grown.node(grown.id_of("a3")).introduced_at == 2
    # original tree untouched
    assert "a3" not in [tree.name(v) for v in tree.class_ids]


def test_bifurcation_former_leaf_keeps_id():
    tree = small_tree()
    human = tree.id_of("B")
    grown = tree.insert_subtree(human, [("b1", "B"), ("b2", "B")], task=2)
    assert grown.id_of("B") == human
    assert not grown.is_leaf(human)
    assert tree.is_leaf(human)
    old_leaves = set(tree.leaves)
    new_leaves = set(grown.leaves)
    assert new_leaves - old_leaves == {grown.id_of("b1"), grown.id_of("b2")}
    assert old_leaves - new_leaves == {human}


def test_insert_chain_revalidates():
    tree = small_tree()
    grown = tree.insert_subtree(
        tree.id_of("B"), [("mid", "B"), ("deep", "mid"), ("leaf", "deep")], task=3)
    grown.validate()
    assert grown.level(grown.id_of("leaf")) == 4
    assert grown.depth == 4


def test_insert_duplicate_and_missing_parent():
    tree = small_tree()
    with pytest.raises(TaxonomyError):
        tree.insert_subtree(tree.id_of("A"), [("a1", "A")], task=2)
    with pytest.raises(TaxonomyError):
        tree.insert_subtree(tree.id_of("A"), [("x", "nope")], task=2)


def test_parse_minimal_and_comments():
    tree = parse_taxonomy("# comment\nonly ROOT  # trailing\n")
    assert tree.leaves == [tree.id_of("only")]
    assert tree.depth == 1


def test_parse_cycle_names_both_nodes():
    with pytest.raises(TaxonomyError) as exc:
        parse_taxonomy("A B\nB A\n")
    assert "A" in str(exc.value) and "B" in str(exc.value)


def test_parse_duplicate_and_orphan():
    with pytest.raises(TaxonomyError, match="duplicate"):
        parse_taxonomy("A ROOT\nA ROOT\n")
    with pytest.raises(TaxonomyError, match="unknown parent"):
        parse_taxonomy("A ROOT\nB missing\n")
    with pytest.raises(TaxonomyError, match="task"):
        parse_taxonomy("A ROOT task=zero\n")


def test_subtree_at_task_and_hashes():
    bg = load_taxonomy(CONFIGS / "taxonomy_6_3.txt")
    bif = load_taxonomy(CONFIGS / "taxonomy_3_9.txt")
    assert bg.structural_hash() == bif.structural_hash()
    assert bg.full_hash() != bif.full_hash()
    base = bg.subtree_at_task(1)
    assert len(base.leaves) == 6
    assert len(bg.subtree_at_task(2).leaves) == 9
    base_bif = bif.subtree_at_task(1)
    assert len(base_bif.leaves) == 3
    # ids are stable across files with the same structure
    assert bg.id_of("a3") == bif.id_of("a3")


def test_parent_must_not_arrive_after_child():
    with pytest.raises(TaxonomyError, match="before its parent"):
        parse_taxonomy("A ROOT task=2\na1 A task=1\n")
