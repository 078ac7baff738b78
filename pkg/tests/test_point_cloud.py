import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from honom.point_cloud import (PointCloud, build_grid, build_supports, default_neighbor_count,
                               dual_supports, knn, read_cloud, weight_values, write_cloud)


def brute_knn(X, k):
    out = []
    for i in range(len(X)):
        d = np.linalg.norm(X - X[i], axis=1)
        key = np.round(d / d.max(), 12)
        order = [j for j in np.lexsort((np.arange(len(X)), key)) if j != i]
        out.append(order[:k])
    return np.array(out)


def test_grid_layout_and_tags():
    c = build_grid([0, 0], [1, 2], [3, 5])
    assert len(c) == 15 and c.dim == 2
    # first axis varies slowest
    assert np.allclose(c.positions[:5, 0], 0) and np.allclose(c.positions[:5, 1], [0, .5, 1, 1.5, 2])
    assert c.boundary_tags[0] == {"xmin", "ymin"}
    assert c.boundary_tags[7] == frozenset()
    assert set(c.tagged("xmax")) == {10, 11, 12, 13, 14}
    assert len(c.tagged()) == 12
    assert c.tag_names == {"xmin", "xmax", "ymin", "ymax"}


def test_tributary_volumes_sum_to_measure():
    c = build_grid([0, 0, 0], [1, 2, 3], [4, 5, 6])
    assert c.volumes.sum() == pytest.approx(6.0)
    assert c.volumes.max() == pytest.approx(1 / 3 * 0.5 * 0.6)


def test_cell_volumes_uniform():
    c = build_grid([0, 0], [1, 1], [11, 11], volume_rule="cell")
    assert np.allclose(c.volumes, 0.01)


def test_higher_dimension_tags():
    c = build_grid([0] * 4, [1] * 4, 3)
    assert "x4max" in c.tag_names and len(c) == 81


def test_perturbation_moves_interior_only_and_is_seeded():
    a = build_grid([0, 0], [1, 1], [6, 6], perturbation=0.5, seed=7)
    b = build_grid([0, 0], [1, 1], [6, 6], perturbation=0.5, seed=7)
    reg = build_grid([0, 0], [1, 1], [6, 6])
    assert np.array_equal(a.positions, b.positions)
    bnd = reg.tagged()
    assert np.array_equal(a.positions[bnd], reg.positions[bnd])
    shift = np.abs(a.positions - reg.positions)
    assert shift.max() <= 0.5 * 0.2 / 2 + 1e-15 and shift.max() > 0
    assert np.array_equal(a.volumes, reg.volumes)


@pytest.mark.parametrize("kw", [dict(lower=[0], upper=[0], counts=[3]),
                                dict(lower=[0], upper=[1], counts=[1]),
                                dict(lower=[0], upper=[1], counts=[3], perturbation=1.0),
                                dict(lower=[0, 0], upper=[1], counts=[3]),
                                dict(lower=[0], upper=[1], counts=[3], volume_rule="x")])
def test_grid_rejects(kw):
    with pytest.raises(ValueError):
        build_grid(**kw)


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 2)), [1.0])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 2)), [1.0, 0.0])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 2)), [1.0, 1.0], [set()])


def test_knn_one_dimensional():
    X = np.linspace(0, 1, 7)[:, None]
    nb = knn(X, 2)
    for i in range(1, 6):
        assert set(nb[i]) == {i - 1, i + 1}
    assert list(nb[0]) == [1, 2]


def test_knn_lattice_center():
    c = build_grid([0, 0], [1, 1], [5, 5])
    nb = knn(c.positions, 8)
    ctr = 12
    want = {6, 7, 8, 11, 13, 16, 17, 18}
    assert set(nb[ctr]) == want
    assert np.array_equal(nb, brute_knn(c.positions, 8))


@given(st.integers(5, 40), st.integers(1, 3), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_knn_matches_brute_force(n, d, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    k = min(k, n - 1)
    assert np.array_equal(knn(X, k), brute_knn(X, k))


def test_knn_ties_by_index_on_lattice():
    c = build_grid([0] * 3, [1] * 3, [4] * 3)
    assert np.array_equal(knn(c.positions, 10), brute_knn(c.positions, 10))


@given(st.integers(6, 40), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_dual_support_inverts_support(n, k, seed):
    X = np.random.default_rng(seed).random((n, 2))
    nb = knn(X, k)
    dual = dual_supports(nb)
    for j in range(n):
        assert set(dual[j]) == {i for i in range(n) if j in nb[i]}


def test_supports_lengths_and_weights():
    c = build_grid([0, 0], [1, 1], [5, 5])
    s = build_supports(c, 8, "gauss")
    assert np.allclose(s.h[12], np.sqrt(2) * 0.25)
    r = np.linalg.norm(c.positions[s.neighbors[12]] - c.positions[12], axis=1)
    assert np.allclose(s.weights[12], np.exp(-(2 * r / s.h[12]) ** 2))
    assert s.k == 8
    with pytest.raises(ValueError):
        build_supports(c, 25)
    with pytest.raises(ValueError):
        build_supports(c, 0)


def test_weight_values():
    r = np.ones((2, 3, 1))
    h = np.array([1.0, 2.0])
    v = np.full((2, 3), 4.0)
    assert np.all(weight_values("const", r, h, v) == 1)
    assert np.allclose(weight_values("invvol", r, h, v), 0.25)
    assert np.allclose(weight_values("gauss", r, h, v, gauss_shape=3.0)[1], np.exp(-2.25))
    with pytest.raises(ValueError):
        weight_values("tent", r, h, v)


def test_default_neighbor_count():
    assert default_neighbor_count(2, 1) == 7
    assert default_neighbor_count(3, 2) == 19


def test_cloud_file_round_trip(tmp_path):
    c = build_grid([0, 0], [1, 1], [3, 3], perturbation=0.3, seed=1)
    path = tmp_path / "c.txt"
    write_cloud(path, c)
    d = read_cloud(path)
    assert np.array_equal(c.positions, d.positions)
    assert np.array_equal(c.volumes, d.volumes)
    assert c.boundary_tags == d.boundary_tags


def test_cloud_file_comments_and_errors(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("# header\n0 0 1 xmin,ymin\n\n1 0 1  # trailing comment\n")
    c = read_cloud(p)
    assert len(c) == 2 and c.boundary_tags[0] == {"xmin", "ymin"} and not c.boundary_tags[1]
    p.write_text("0 0 1\n1 1\n")
    with pytest.raises(ValueError):
        read_cloud(p)
    p.write_text("# nothing\n")
    with pytest.raises(ValueError):
        read_cloud(p)
