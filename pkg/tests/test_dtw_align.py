import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uotalign import dtw_align as dt
from uotalign.synthdata import Trajectory


def brute_force_dtw(X, Y):
    """Minimum Euclidean path cost over every monotone warping path."""
    n, m = len(X), len(Y)
    best = np.inf

    def walk(i, j, acc):
        nonlocal best
        acc += np.linalg.norm(X[i] - Y[j])
        if acc >= best:
            return
        if i == n - 1 and j == m - 1:
            best = acc
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)

    walk(0, 0, 0.0)
    return best


def path_cost(X, Y, path):
    return sum(np.linalg.norm(X[i] - Y[j]) for i, j in path)


def traj(proprio):
    p = np.asarray(proprio, dtype=np.float64).reshape(len(proprio), -1)
    z = np.zeros((len(p), 2))
    return Trajectory("src", "source", np.zeros(2), z, p, z)


def test_identity_is_diagonal():
    X = np.random.default_rng(0).normal(size=(5, 2))
    r = dt.dtw(X, X)
    assert r.distance == 0.0
    assert r.path == [(i, i) for i in range(5)]


def test_single_step():
    r = dt.dtw([[0.0]], [[3.0]])
    assert r.distance == 3.0 and r.path == [(0, 0)]


def test_small_example():
    X, Y = [[0.0], [1.0], [2.0]], [[0.0], [2.0]]
    assert dt.dtw(X, Y).distance == 1.0 == brute_force_dtw(np.array(X), np.array(Y))


def test_matches_brute_force(rng):
    for _ in range(100):
        n, m = rng.integers(1, 7, 2)
        X, Y = rng.normal(size=(n, 2)), rng.normal(size=(m, 2))
        r = dt.dtw(X, Y)
        assert r.distance == pytest.approx(brute_force_dtw(X, Y), abs=1e-12)
        assert path_cost(X, Y, r.path) == pytest.approx(r.distance, abs=1e-12)
        assert r.path[0] == (0, 0) and r.path[-1] == (n - 1, m - 1)
        steps = {(b[0] - a[0], b[1] - a[1]) for a, b in zip(r.path, r.path[1:])}
        assert steps <= {(1, 1), (1, 0), (0, 1)}


def test_tie_break_prefers_diagonal():
    # all step costs are zero, so every move ties
    r = dt.dtw(np.zeros((3, 1)), np.zeros((3, 1)))
    assert r.path == [(0, 0), (1, 1), (2, 2)]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_symmetry(n, m, seed):
    r = np.random.default_rng(seed)
    X, Y = r.normal(size=(n, 3)), r.normal(size=(m, 3))
    assert dt.dtw_distance(X, Y) == pytest.approx(dt.dtw_distance(Y, X), abs=1e-12)


def test_dtw_input_errors():
    with pytest.raises(ValueError):
        dt.dtw(np.zeros((0, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        dt.dtw(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        dt.dtw([[np.inf]], [[0.0]])


def test_normalized_dtw_examples():
    a = traj([[0.0, 0.0], [1.0, 1.0]])
    assert dt.normalized_dtw(a, a) == 0.0
    assert dt.normalized_dtw(traj([[0.0]]), traj([[1.0]])) == 1.0
    X = traj([[0.0], [0.0], [0.0], [0.8]])
    Y = traj([[0.0], [0.0]])
    assert dt.dtw_distance(X.proprio, Y.proprio) == pytest.approx(0.8)
    assert dt.normalized_dtw(X, Y) == pytest.approx(0.2)


def test_weight_transform_examples():
    assert dt.weight_transform(0.01) == 0.5
    assert dt.weight_transform(10.0) < 1e-40
    assert dt.weight_transform(0.0) == pytest.approx(0.5249791874789399, abs=1e-12)
    d = np.sort(np.random.default_rng(3).random(50))
    w = dt.weight_transform(d)
    assert np.all(np.diff(w) < 0)


def test_pair_weights(rng):
    src = [traj(rng.normal(size=(int(rng.integers(3, 8)), 2))) for _ in range(4)]
    tgt = [traj(src[2].proprio.copy()), traj(rng.normal(size=(5, 2)))]
    W = dt.build_pair_weights(src, tgt)
    assert W.shape == (4, 2)
    assert np.all((W.weights > 0) & (W.weights < 1))
    assert W.weights[2, 0] == pytest.approx(dt.weight_transform(0.0))
    assert W.weights[:, 0].argmax() == 2
    perm = [3, 1, 0, 2]
    Wp = dt.build_pair_weights([src[i] for i in perm], tgt)
    assert np.array_equal(Wp.weights, W.weights[perm])


def test_pair_weights_single():
    a, b = traj([[0.0, 0.1], [0.2, 0.3]]), traj([[0.1, 0.1]])
    W = dt.build_pair_weights([a], [b])
    assert W.weights[0, 0] == dt.weight_transform(dt.normalized_dtw(a, b))


def test_uncached_path_recomputed(rng):
    src = [traj(np.zeros((4, 2))), traj(np.full((4, 2), 50.0))]
    tgt = [traj(np.zeros((3, 2)))]
    W = dt.build_pair_weights(src, tgt)
    assert (1, 0) not in W.paths and (0, 0) in W.paths
    assert W.path(1, 0) == dt.dtw(src[1].proprio, tgt[0].proprio).path
    assert W.paths_jsonl().count("\n") == 1


def test_pair_weights_empty():
    with pytest.raises(ValueError):
        dt.build_pair_weights([], [traj([[0.0]])])
