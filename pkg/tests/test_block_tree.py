import pytest
from conftest import full_qc, grow

from hotstuffsim.BlockTree import BlockTree
from hotstuffsim.model.Base import HeightMismatch, HeightNotAbove, InvalidJustify, InvalidNode, OrphanParent
from hotstuffsim.model.TreeModel import Node


def test_genesis(tree):
    assert tree.genesis.height == 0
    assert tree.genesis.is_genesis
    assert tree.genesis_qc.node == tree.genesis.id
    assert len(tree) == 1


def test_create_leaf_pads_with_dummies(tree):
    leaf = tree.create_leaf(tree.genesis.id, "a", tree.genesis_qc, 3)
    assert leaf.height == 3
    dummies = [b for b in tree.created if b.id != leaf.id]
    assert [b.height for b in dummies] == [1, 2]
    assert all(b.is_dummy for b in dummies)
    assert tree.extends(leaf.id, tree.genesis.id)
    assert tree.get(leaf.parent).is_dummy


def test_basic_mode_requires_next_height(crypto):
    tree = BlockTree(crypto, padded=False)
    with pytest.raises(HeightMismatch):
        tree.create_leaf(tree.genesis.id, "a", None, 2)
    assert tree.create_leaf(tree.genesis.id, "a", None, 1).height == 1


def test_height_not_above(tree):
    a = tree.create_leaf(tree.genesis.id, "a", tree.genesis_qc, 2)
    with pytest.raises(HeightNotAbove):
        tree.create_leaf(a.id, "b", None, 2)


def test_insert_checks(tree, crypto):
    with pytest.raises(InvalidNode):
        tree.insert(Node(id="a" * 64, parent=tree.genesis.id, height=1))

    other = BlockTree(crypto)
    x, y = grow(other, [1, 2])
    with pytest.raises(OrphanParent):
        tree.insert(y)
    tree.insert(x)
    assert tree.insert(y) == y.id
    assert tree.insert(y) == y.id

    with pytest.raises(HeightMismatch):
        tree.insert(tree.make_node(tree.genesis.id, "h", None, 2))


def test_justify_must_point_to_ancestor(tree, crypto):
    (a,) = grow(tree, [1], prefix="a")
    stray = tree.make_node(tree.genesis.id, "b", full_qc(crypto, a), 1)
    with pytest.raises(InvalidJustify):
        tree.insert(stray)


def test_extends_and_conflicts(tree):
    xs = grow(tree, [1, 2, 3], prefix="x")
    ys = grow(tree, [2, 4], prefix="y")
    assert tree.extends(xs[2].id, xs[0].id)
    assert not tree.extends(xs[0].id, xs[2].id)
    assert tree.conflicts(xs[1].id, ys[1].id)
    assert not tree.conflicts(xs[2].id, tree.genesis.id)
    assert [b.id for b in tree.branch(xs[2].id)] == [tree.genesis.id, *(b.id for b in xs)]


def test_suffix_stops_at_executed(tree):
    xs = grow(tree, [1, 2, 3, 4])
    assert [b.height for b in tree.suffix(xs[3].id, xs[0].id, 8)] == [2, 3]
    assert [b.height for b in tree.suffix(xs[3].id, tree.genesis.id, 2)] == [2, 3]
    assert tree.suffix(xs[0].id, tree.genesis.id, 8) == ()


def test_to_dot(tree):
    grow(tree, [1, 3])
    dot = tree.to_dot()
    assert dot.startswith("digraph tree {")
    assert "style=dashed" in dot
    assert "style=dotted" in dot
