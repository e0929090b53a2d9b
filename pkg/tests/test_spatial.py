import numpy as np
import pytest

from sstsne import spatial


def subtree_members(tree, node):
    if tree.is_leaf[node]:
        return set(tree.leaf_members(node))
    out = set()
    for child in tree.child_ids(node):
        out |= subtree_members(tree, child)
    return out


def brute_repulsion(y):
    n, d = y.shape
    rep = np.zeros((n, d))
    z = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            delta = y[i] - y[j]
            t = 1.0 / (1.0 + delta @ delta)
            z += t
            rep[i] += t * t * delta
    return rep, z


@pytest.mark.parametrize("dims", [2, 3])
def test_tree_structure_invariants(rng, dims):
    pts = rng.standard_normal((80, dims))
    tree = spatial.build(pts)
    assert tree.root.count == 80
    for node in range(tree.n_nodes):
        members = subtree_members(tree, node)
        assert tree.count[node] == len(members)
        assert tree.anchor[node] == min(members)
        idx = sorted(members)
        np.testing.assert_allclose(tree.centroid[node], pts[idx].mean(axis=0),
                                   atol=1e-12)
        assert np.all(pts[idx] >= tree.lo[node] - 1e-12)
        assert np.all(pts[idx] <= tree.hi[node] + 1e-12)
        if not tree.is_leaf[node]:
            child_sets = [subtree_members(tree, c) for c in tree.child_ids(node)]
            assert sum(len(s) for s in child_sets) == len(members)
            assert set.union(*child_sets) == members
        else:
            assert len(members) <= 1 or np.allclose(pts[idx], pts[idx[0]])


def test_tree_leaf_capacity(rng):
    pts = rng.standard_normal((40, 2))
    tree = spatial.build(pts, leaf_capacity=4)
    for node in range(tree.n_nodes):
        if tree.is_leaf[node]:
            assert tree.count[node] <= 4


def test_tree_handles_duplicates():
    pts = np.array([[0.0, 0.0]] * 6 + [[5.0, 5.0], [9.0, 1.0]])
    tree = spatial.build(pts)
    assert tree.root.count == 8
    # Co-located points share one leaf once depth bottoms out.
    leaves = {int(tree.point_leaf[i]) for i in range(6)}
    assert len(leaves) == 1
    assert tree.count[leaves.pop()] == 6


def test_tree_grow_retry_on_dense_duplicates(rng):
    base = rng.standard_normal((20, 2)) * 10
    pts = np.repeat(base, 2, axis=0)
    tree = spatial.build(pts)
    assert tree.root.count == 40


def test_build_rejects_bad_input():
    with pytest.raises(ValueError, match="N x 2 or N x 3"):
        spatial.build(np.zeros((4, 5)))
    with pytest.raises(ValueError, match="non-finite"):
        spatial.build(np.array([[0.0, np.nan]]))
    with pytest.raises(ValueError, match="leaf_capacity"):
        spatial.build(np.zeros((2, 2)), leaf_capacity=0)


def test_summarize_theta_zero_enumerates_points(rng):
    pts = rng.standard_normal((30, 2))
    tree = spatial.build(pts)
    for target in (0, 13, 29):
        seen = []
        spatial.bh_summarize(tree, target, 0.0,
                             lambda pos, cnt, node: seen.append((pos.copy(), cnt)))
        assert all(cnt == 1 for _, cnt in seen)
        got = np.sort(np.array([pos for pos, _ in seen]), axis=0)
        expect = np.sort(np.delete(pts, target, axis=0), axis=0)
        np.testing.assert_allclose(got, expect)


@pytest.mark.parametrize("theta", [0.3, 0.8, 2.0])
def test_summarize_conserves_mass(rng, theta):
    pts = rng.standard_normal((100, 3))
    tree = spatial.build(pts)
    for target in (0, 57):
        total = []
        spatial.bh_summarize(tree, target, theta,
                             lambda pos, cnt, node: total.append(cnt))
        assert sum(total) == 99


def test_repulsion_theta_zero_exact(rng):
    pts = rng.standard_normal((50, 2)) * 3
    tree = spatial.build(pts)
    rep, z = spatial.repulsion_forces(tree, 0.0)
    exact_rep, exact_z = brute_repulsion(pts)
    np.testing.assert_allclose(rep, exact_rep, atol=1e-9)
    assert abs(z - exact_z) < 1e-9


@pytest.mark.parametrize("dims", [2, 3])
def test_repulsion_theta_half_accuracy(rng, dims):
    pts = rng.uniform(-20, 20, size=(400, dims))
    tree = spatial.build(pts)
    rep, z = spatial.repulsion_forces(tree, 0.5)
    exact_rep, exact_z = brute_repulsion(pts)
    norms = np.linalg.norm(exact_rep, axis=1)
    errors = np.linalg.norm(rep - exact_rep, axis=1) / np.maximum(norms, 1e-30)
    assert errors.mean() < 0.05
    assert abs(z - exact_z) / exact_z < 0.05
    assert z > 0


def test_repulsion_matches_summarize_route(rng):
    """The batch kernel and the visitor traversal agree cell for cell."""
    pts = rng.standard_normal((60, 2)) * 5
    tree = spatial.build(pts)
    rep, z = spatial.repulsion_forces(tree, 0.7)
    slow = np.zeros_like(pts)
    slow_z = 0.0
    for i in range(60):
        def visit(pos, cnt, node, i=i):
            nonlocal slow_z
            delta = pts[i] - pos
            t = 1.0 / (1.0 + delta @ delta)
            slow_z += cnt * t
            slow[i] += cnt * t * t * delta
        spatial.bh_summarize(tree, i, 0.7, visit)
    np.testing.assert_allclose(rep, slow, atol=1e-9)
    assert abs(z - slow_z) < 1e-9


def test_bh_neighbors_two_point_hand_case():
    pts = np.array([[0.0, 0.0], [10.0, 0.0]])
    tree = spatial.build(pts)
    # Tight criterion: both the root and the far point's leaf are entered.
    cells = spatial.bh_neighbors(tree, 0, theta_k=0.1)
    assert [c.anchor for c in cells] == [1]
    assert cells[0].count == 1
    # Loose criterion: the far leaf looks small against its distance and is
    # pruned, and cells anchored at the focus itself are never reported.
    assert spatial.bh_neighbors(tree, 0, theta_k=0.8) == []


def test_bh_neighbors_excludes_self_anchors(rng):
    pts = rng.standard_normal((50, 2))
    tree = spatial.build(pts)
    for i in (0, 7, 49):
        for cell in spatial.bh_neighbors(tree, i, theta_k=0.8):
            assert cell.anchor != i
            assert cell.count >= 1


def test_opportunity_counts_match_python_route(rng):
    """Batch kernel vs the per-sample traversal built on bh_neighbors."""
    from sstsne.emulator import count_opportunities
    from sstsne.engine import AnnotationState

    pts = rng.standard_normal((70, 2)) * 4
    labels = rng.integers(0, 3, size=70)
    ann = AnnotationState.empty(70)
    for i in range(0, 70, 5):
        ann.c[i] = labels[i]
    tree = spatial.build(pts)
    batch = spatial.opportunity_counts(tree, labels, ann.c, theta_k=0.8)
    for i in range(70):
        assert batch[i] == count_opportunities(tree, i, labels, ann, theta_k=0.8)


def test_opportunity_zero_when_all_labeled(rng):
    pts = rng.standard_normal((20, 2))
    labels = rng.integers(0, 2, size=20)
    tree = spatial.build(pts)
    counts = spatial.opportunity_counts(tree, labels, labels.copy(), theta_k=0.8)
    np.testing.assert_array_equal(counts, np.zeros(20, dtype=np.int64))


def test_opportunity_prefers_cohesive_clusters(rng):
    own = rng.normal(0.0, 0.5, size=(30, 2))
    other = rng.normal(20.0, 0.5, size=(30, 2))
    intruder = np.array([[20.0, 20.0]])
    pts = np.vstack([own, other, intruder])
    labels = np.array([0] * 30 + [1] * 30 + [0])
    tree = spatial.build(pts)
    counts = spatial.opportunity_counts(tree, labels, np.full(61, -1), theta_k=0.8)
    # A point inside its own cluster sees far more same-class anchors than
    # the same-class intruder parked inside the opposite cluster.
    assert counts[:30].min() > counts[60]


def test_cell_accessors(rng):
    pts = rng.standard_normal((10, 3))
    tree = spatial.build(pts)
    root = tree.root
    assert root.node_id == 0
    assert root.count == 10
    assert root.anchor == 0
    assert not root.is_leaf
    path = tree.path_to_root(4)
    assert path[0] == int(tree.point_leaf[4])
    assert path[-1] == 0
    assert 4 in tree.leaf_members(path[0])
