import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uotalign import ot_solvers as ot
from uotalign.geometry import pairwise_sq_euclid

U2 = ot.Marginals.uniform(2, 2)
SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def random_cost(rng, n, m, scale=1.0):
    return scale * rng.random((n, m))


# balanced ------------------------------------------------------------------

def test_single_point_coupling():
    P = ot.sinkhorn_balanced([[3.7]], ot.Marginals([1.0], [1.0]), 0.1)
    assert P.plan.tolist() == [[1.0]]


def test_balanced_swap_example():
    res = ot.sinkhorn_balanced(SWAP, U2, 0.01)
    np.testing.assert_allclose(res.plan, [[0.5, 0], [0, 0.5]], atol=1e-6)
    assert abs(res.objective) < 1e-4


def test_balanced_max_entropy_limit(rng):
    C = rng.random((4, 5))
    mu = ot.Marginals.uniform(4, 5)
    res = ot.sinkhorn_balanced(C, mu, 1e6)
    np.testing.assert_allclose(res.plan, np.outer(mu.p, mu.q), atol=1e-4)


@pytest.mark.parametrize("log_domain", [False, True])
def test_balanced_marginals_within_tol(rng, log_domain):
    for _ in range(10):
        n, m = rng.integers(2, 9, 2)
        C = random_cost(rng, n, m)
        p, q = rng.random(n) + 0.1, rng.random(m) + 0.1
        mu = ot.Marginals(p / p.sum(), q / q.sum())
        res = ot.sinkhorn_balanced(C, mu, 0.05, log_domain=log_domain)
        assert res.converged
        assert res.row_residual <= 1e-9 and res.col_residual <= 1e-9


def test_linear_and_log_domain_agree(rng):
    C = random_cost(rng, 6, 5)
    mu = ot.Marginals.uniform(6, 5)
    a = ot.sinkhorn_balanced(C, mu, 0.1, log_domain=False)
    b = ot.sinkhorn_balanced(C, mu, 0.1, log_domain=True)
    np.testing.assert_allclose(a.plan, b.plan, atol=1e-9)


def test_balanced_constant_shift(rng):
    C = random_cost(rng, 5, 5)
    mu = ot.Marginals.uniform(5, 5)
    a = ot.sinkhorn_balanced(C, mu, 0.05)
    b = ot.sinkhorn_balanced(C + 2.5, mu, 0.05)
    np.testing.assert_allclose(a.plan, b.plan, atol=1e-8)
    assert b.objective - a.objective == pytest.approx(2.5, abs=1e-8)


def test_balanced_cost_upper_bounds_exact(rng):
    for _ in range(20):
        n = int(rng.integers(2, 6))
        C = random_cost(rng, n, n)
        _, exact = ot.exact_ot_oracle(C)
        for eps in (1.0, 0.1, 0.01):
            assert ot.sinkhorn_balanced(C, ot.Marginals.uniform(n, n), eps).objective >= exact - 1e-12


def test_balanced_zero_mass_rows():
    C = np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])
    res = ot.sinkhorn_balanced(C, ot.Marginals([0.5, 0.5, 0.0], [0.5, 0.5]), 0.05)
    assert np.all(res.plan[2] == 0.0)
    assert res.row_residual <= 1e-9


def test_nearly_triangular_kernel_polished():
    # kernel close to lacking total support: plain scaling crawls, the Newton polish finishes
    C = np.array([[0.0, 0.0], [10.0, 0.0]])
    res = ot.sinkhorn_balanced(C, U2, 0.5, max_iter=50)
    assert res.converged and res.row_residual <= 1e-9


def test_balanced_input_errors():
    with pytest.raises(ValueError):
        ot.sinkhorn_balanced(SWAP, ot.Marginals([0.5, 0.5], [0.2, 0.2]), 0.1)
    with pytest.raises(ValueError):
        ot.sinkhorn_balanced(SWAP, ot.Marginals.uniform(3, 2), 0.1)
    with pytest.raises(ValueError):
        ot.sinkhorn_balanced(SWAP, U2, 0.0)
    with pytest.raises(ValueError):
        ot.sinkhorn_balanced(-SWAP, U2, 0.1)
    with pytest.raises(ValueError):
        ot.Marginals([-0.1, 1.1], [0.5, 0.5])


def test_linear_domain_underflow_raises():
    with pytest.raises(ot.SolverError):
        ot.sinkhorn_balanced(np.full((2, 2), 1000.0) + SWAP, U2, 1e-3, log_domain=False)


def test_small_epsilon_auto_log_domain(rng):
    C = 100 * random_cost(rng, 4, 4)
    res = ot.sinkhorn_balanced(C, ot.Marginals.uniform(4, 4), 1e-3)
    assert np.all(np.isfinite(res.plan)) and res.row_residual <= 1e-9


# unbalanced ----------------------------------------------------------------

def test_tau_zero_closed_form(rng):
    C = random_cost(rng, 3, 4)
    res = ot.sinkhorn_unbalanced(C, ot.Marginals.uniform(3, 4), ot.UotConfig(epsilon=0.5, tau=0.0))
    assert np.array_equal(res.plan, np.exp(-C / 0.5))


def test_large_tau_matches_balanced(rng):
    C = random_cost(rng, 4, 4)
    mu = ot.Marginals.uniform(4, 4)
    u = ot.sinkhorn_unbalanced(C, mu, ot.UotConfig(epsilon=0.1, tau=1e6))
    b = ot.sinkhorn_balanced(C, mu, 0.1)
    np.testing.assert_allclose(u.plan, b.plan, atol=1e-3)


def test_symmetric_cost_symmetric_plan(rng):
    A = rng.normal(size=(5, 2))
    C = pairwise_sq_euclid(A, A)
    res = ot.sinkhorn_unbalanced(C, ot.Marginals.uniform(5, 5), ot.UotConfig(epsilon=0.1, tau=0.5))
    np.testing.assert_allclose(res.plan, res.plan.T, atol=1e-10)


@pytest.mark.parametrize("eps,tau", [(0.1, 0.05), (0.05, 1.0), (1.0, 0.2)])
def test_unbalanced_matches_oracle(rng, eps, tau):
    cfg = ot.UotConfig(epsilon=eps, tau=tau)
    for _ in range(5):
        n, m = rng.integers(1, 5, 2)
        C = random_cost(rng, n, m)
        p, q = rng.random(n) + 0.1, rng.random(m) + 0.1
        mu = ot.Marginals(p, q)
        res = ot.sinkhorn_unbalanced(C, mu, cfg)
        _, obj, ok = ot.exact_uot_oracle(C, mu, cfg)
        assert ok
        assert abs(res.objective - obj) <= 1e-6


def test_unbalanced_paper_regime_log_domain(rng):
    # eps=5e-4, tau=0.01 on an O(1) cost: kernel underflows in linear space
    C = 4 * random_cost(rng, 16, 16)
    mu = ot.Marginals.uniform(16, 16)
    res = ot.sinkhorn_unbalanced(C, mu, ot.UotConfig())
    assert res.converged and np.all(np.isfinite(res.plan))
    # oracle comparison needs plan entries representable in float64
    Cs, mus = 0.01 * C[:2, :2], ot.Marginals.uniform(2, 2)
    _, obj, _ = ot.exact_uot_oracle(Cs, mus, ot.UotConfig())
    assert abs(ot.sinkhorn_unbalanced(Cs, mus, ot.UotConfig()).objective - obj) <= 1e-6


def test_unbalanced_mass_decreases_with_row_inflation():
    cfg = ot.UotConfig(epsilon=0.1, tau=0.3)
    base = np.array([[0.2, 0.5], [0.4, 0.1]])
    masses = []
    for d in np.linspace(0, 3, 7):
        C = base.copy()
        C[0] += d
        masses.append(ot.sinkhorn_unbalanced(C, U2, cfg).plan.sum())
    assert all(b <= a + 1e-12 for a, b in zip(masses, masses[1:]))


def test_unbalanced_requires_positive_marginals():
    with pytest.raises(ValueError):
        ot.sinkhorn_unbalanced(SWAP, ot.Marginals([1.0, 0.0], [0.5, 0.5]))


def test_uot_config_validation():
    for kw in ({"epsilon": 0}, {"tau": -1}, {"tol": 0}, {"max_iter": 0}):
        with pytest.raises(ValueError):
            ot.UotConfig(**kw)


def test_non_convergence_flagged(rng):
    C = random_cost(rng, 5, 5)
    res = ot.sinkhorn_unbalanced(C, ot.Marginals.uniform(5, 5), ot.UotConfig(epsilon=0.01, tau=1.0, max_iter=2))
    assert not res.converged


# objective, cost, oracles ---------------------------------------------------

def test_objective_examples():
    cfg = ot.UotConfig(epsilon=0.3, tau=0.7)
    P = np.outer(U2.p, U2.q)
    assert ot.uot_objective(P, np.zeros((2, 2)), U2, cfg) == pytest.approx(
        0.3 * np.sum(P * (np.log(P) - 1)), abs=1e-15)
    assert ot.uot_objective(np.zeros((2, 2)), SWAP, U2, cfg) == pytest.approx(0.7 * 2.0)


def test_closed_form_is_local_min(rng):
    cfg = ot.UotConfig(epsilon=0.5, tau=0.0)
    C = random_cost(rng, 3, 3)
    P = np.exp(-C / 0.5)
    mu = ot.Marginals.uniform(3, 3)
    base = ot.uot_objective(P, C, mu, cfg)
    for _ in range(20):
        E = rng.normal(size=P.shape)
        assert ot.uot_objective(np.maximum(P + 1e-3 * E, 0), C, mu, cfg) >= base


def test_transport_cost_examples():
    assert ot.transport_cost(np.eye(2) / 2, SWAP) == 0.0
    assert ot.transport_cost(np.full((2, 2), 0.25), SWAP) == 0.5
    assert ot.transport_cost(np.full((3, 2), 0.7), np.zeros((3, 2))) == 0.0
    with pytest.raises(ValueError):
        ot.transport_cost(np.eye(2), np.zeros((3, 2)))


def test_kl_and_entropy_conventions():
    assert ot.kl_generalized([0.0, 0.0], [0.5, 0.5]) == 1.0
    assert ot.kl_generalized([0.3, 0.2], [0.3, 0.2]) == 0.0
    assert ot.entropy_term(np.zeros((2, 2))) == 0.0


def test_exact_ot_oracle_examples():
    plan, cost = ot.exact_ot_oracle(SWAP)
    assert plan.tolist() == [[0.5, 0], [0, 0.5]] and cost == 0.0
    plan, cost = ot.exact_ot_oracle(np.ones((3, 3)))
    assert cost == 1.0 and np.array_equal(plan, np.eye(3) / 3)
    plan, cost = ot.exact_ot_oracle([[1.0, 2.0], [2.0, 1.0]])
    assert plan.tolist() == [[0.5, 0], [0, 0.5]] and cost == 1.0
    with pytest.raises(ValueError):
        ot.exact_ot_oracle(np.ones((9, 9)))
    with pytest.raises(ValueError):
        ot.exact_ot_oracle(np.ones((2, 3)))


def test_exact_uot_oracle_examples(rng):
    cfg = ot.UotConfig(epsilon=0.2, tau=0.0)
    C = random_cost(rng, 2, 3)
    P, _, ok = ot.exact_uot_oracle(C, ot.Marginals.uniform(2, 3), cfg)
    assert ok
    np.testing.assert_allclose(P, np.exp(-C / 0.2), atol=1e-8)
    A = rng.normal(size=(3, 1))
    Cs = pairwise_sq_euclid(A, A)
    P, _, _ = ot.exact_uot_oracle(Cs, ot.Marginals.uniform(3, 3), ot.UotConfig(epsilon=0.1, tau=0.4))
    np.testing.assert_allclose(P, P.T, atol=1e-10)
    with pytest.raises(ValueError):
        ot.exact_uot_oracle(np.ones((5, 4)), ot.Marginals.uniform(5, 4), cfg)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.floats(0.02, 2.0), st.integers(0, 2**32 - 1))
def test_property_balanced_marginals(n, m, eps, seed):
    r = np.random.default_rng(seed)
    C = r.random((n, m))
    res = ot.sinkhorn_balanced(C, ot.Marginals.uniform(n, m), eps)
    assert res.converged
    assert res.row_residual <= 1e-9 and res.col_residual <= 1e-9
    assert np.all(res.plan >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.sampled_from([0.05, 0.2, 1.0]),
       st.sampled_from([0.05, 0.2, 1.0]), st.integers(0, 2**32 - 1))
def test_property_unbalanced_oracle(n, m, eps, tau, seed):
    r = np.random.default_rng(seed)
    C = r.random((n, m))
    mu = ot.Marginals(r.random(n) + 0.05, r.random(m) + 0.05)
    cfg = ot.UotConfig(epsilon=eps, tau=tau)
    _, obj, _ = ot.exact_uot_oracle(C, mu, cfg)
    assert abs(ot.sinkhorn_unbalanced(C, mu, cfg).objective - obj) <= 1e-6
