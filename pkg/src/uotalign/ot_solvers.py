"""Entropic optimal transport solvers (balanced and KL-relaxed) plus exact oracles.

Entropy convention: ``Omega(P) = sum P_ij (log P_ij - 1)`` with ``0 log 0 = 0``.
Marginal penalties use the generalized KL ``sum a log(a/b) - a + b``.
"""
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from . import _kernels
from .geometry import check_cost

DEFAULT_MAX_ITER = 10_000
DEFAULT_TOL = 1e-9


class SolverError(ArithmeticError):
    """Raised when the linear-domain kernel underflows for the requested epsilon."""


@dataclass(frozen=True)
class Marginals:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64).ravel()
        q = np.asarray(self.q, dtype=np.float64).ravel()
        if np.any(p < 0) or np.any(q < 0) or not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("marginals must be finite and non-negative")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def uniform(cls, n, m):
        return cls(np.full(n, 1.0 / n), np.full(m, 1.0 / m))


@dataclass(frozen=True)
class UotConfig:
    epsilon: float = 0.0005
    tau: float = 0.01
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray
    iterations: int
    row_residual: float
    col_residual: float
    objective: float
    converged: bool = True

    def summary(self):
        return {
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "row_residual": float(self.row_residual),
            "col_residual": float(self.col_residual),
            "converged": bool(self.converged),
        }


def _plan_array(plan):
    return plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)


def _check_shapes(C, mu):
    if C.shape != (len(mu.p), len(mu.q)):
        raise ValueError(f"cost shape {C.shape} does not match marginals ({len(mu.p)}, {len(mu.q)})")


def _use_log_domain(C, epsilon, log_domain):
    if log_domain is None:
        return epsilon < 0.01 * float(C.max(initial=0.0))
    return bool(log_domain)


def _residuals(P, mu):
    return (float(np.max(np.abs(P.sum(axis=1) - mu.p), initial=0.0)),
            float(np.max(np.abs(P.sum(axis=0) - mu.q), initial=0.0)))


def _linear_kernel(C, epsilon):
    K = np.exp(-C / epsilon)
    if np.any(K.sum(axis=1) == 0) or np.any(K.sum(axis=0) == 0):
        raise SolverError(
            f"epsilon too small for cost scale (epsilon={epsilon}, max cost={C.max()}); "
            "use the log-domain solver"
        )
    return K


def _linear_scaling(K, p, q, kappa, max_iter, tol, balanced):
    u, v, it, converged, finite = _kernels.sinkhorn_scaling(
        np.ascontiguousarray(K), np.ascontiguousarray(p), np.ascontiguousarray(q),
        float(kappa), int(max_iter), float(tol), bool(balanced))
    if not finite:
        raise SolverError("non-finite scaling in linear-domain Sinkhorn; epsilon too small for cost scale")
    return u[:, None] * K * v[None, :], it, converged


def _dual_newton(C, p, q, eps, f, g, tol, max_steps=100):
    """Newton ascent on the balanced entropic dual from potentials ``f, g``.

    The last column potential is pinned to remove the constant shift between
    ``f`` and ``g``. Returns ``(plan, steps, converged)``.
    """
    n, m = C.shape

    def plan(f, g):
        return np.exp((f[:, None] + g[None, :] - C) / eps)

    def dual(f, g):
        return f @ p + g @ q - eps * plan(f, g).sum()

    f, g = f + g[-1], g - g[-1]
    P = plan(f, g)
    for step in range(max_steps):
        r, c = P.sum(axis=1), P.sum(axis=0)
        if max(np.max(np.abs(r - p)), np.max(np.abs(c - q))) <= tol:
            return P, step, True
        grad = np.concatenate([p - r, (q - c)[:-1]])
        H = np.zeros((n + m - 1, n + m - 1))
        H[:n, :n] = np.diag(r)
        H[n:, n:] = np.diag(c[:-1])
        H[:n, n:] = P[:, :-1]
        H[n:, :n] = P[:, :-1].T
        d = eps * np.linalg.lstsq(H, grad, rcond=None)[0]
        df, dg = d[:n], np.append(d[n:], 0.0)
        t, d0 = 1.0, dual(f, g)
        slope = float(grad @ d) / eps
        while t > 1e-10:
            fn, gn = f + t * df, g + t * dg
            if np.all(np.isfinite(plan(fn, gn))) and dual(fn, gn) >= d0 + 1e-4 * t * slope * eps:
                break
            t *= 0.5
        if t <= 1e-10:
            break
        f, g = fn, gn
        P = plan(f, g)
    r, c = P.sum(axis=1), P.sum(axis=0)
    ok = max(np.max(np.abs(r - p)), np.max(np.abs(c - q))) <= tol
    return P, max_steps, ok


def sinkhorn_balanced(C, mu, epsilon, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL, log_domain=None,
                      polish=True):
    """Entropic OT with exact marginals by Sinkhorn-Knopp scaling.

    Iterates ``u <- p / (K v)``, ``v <- q / (K^T u)`` with ``K = exp(-C / epsilon)``
    until the row-marginal residual is at most ``tol``. The column marginal is
    exact after every ``v`` update. When ``log_domain`` is ``None`` the
    stabilized log-domain variant is used whenever ``epsilon < 0.01 * max(C)``.

    Sinkhorn slows to a sublinear rate when the kernel is close to having no
    total support (e.g. nearly triangular). With ``polish`` set, an exhausted
    iteration budget is followed by Newton steps on the dual potentials, which
    converge to the same ``diag(u) K diag(v)`` fixed point.

    The returned ``objective`` is the transport cost ``<P, C>``.
    """
    C = check_cost(C)
    if not isinstance(mu, Marginals):
        mu = Marginals(*mu)
    _check_shapes(C, mu)
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if abs(mu.p.sum() - mu.q.sum()) > 1e-12:
        raise ValueError(f"unbalanced marginals: sum(p)={mu.p.sum()} != sum(q)={mu.q.sum()}")

    rows, cols = np.flatnonzero(mu.p > 0), np.flatnonzero(mu.q > 0)
    Cs, ps, qs = C[np.ix_(rows, cols)], mu.p[rows], mu.q[cols]
    if len(rows) == 1 or len(cols) == 1:
        # a single support point on either side fixes the coupling
        Ps, it, converged = np.outer(ps, qs) / ps.sum(), 0, True
    elif _use_log_domain(Cs, epsilon, log_domain):
        f, g, it, converged = _kernels.sinkhorn_potentials(
            np.ascontiguousarray(Cs), np.log(ps), np.log(qs), float(epsilon), 1.0,
            int(max_iter), float(tol), True)
        Ps = np.exp((f[:, None] + g[None, :] - Cs) / epsilon)
    else:
        K = _linear_kernel(Cs, epsilon)
        u, v, it, converged, finite = _kernels.sinkhorn_scaling(
            np.ascontiguousarray(K), ps, qs, 1.0, int(max_iter), float(tol), True)
        if not finite:
            raise SolverError("non-finite scaling in linear-domain Sinkhorn; epsilon too small for cost scale")
        Ps = u[:, None] * K * v[None, :]
        f, g = epsilon * np.log(u), epsilon * np.log(v)
    if not converged and polish and Ps.size <= 250_000:
        Ps, steps, converged = _dual_newton(Cs, ps, qs, epsilon, f, g, tol)
        it += steps

    P = np.zeros_like(C)
    P[np.ix_(rows, cols)] = Ps
    rr, cr = _residuals(P, mu)
    return TransportPlan(P, int(it), rr, cr, transport_cost(P, C), bool(converged))


def sinkhorn_unbalanced(C, mu, cfg=None, log_domain=None):
    """Entropic OT with KL-relaxed marginals (scaling algorithm).

    Minimizes ``<P, C> + eps * Omega(P) + tau * KL(P 1 | p) + tau * KL(P^T 1 | q)``
    with the damped updates ``u <- (p / K v) ** (tau / (tau + eps))`` and the
    symmetric column update. Stops when the sup-norm change of ``log u`` and
    ``log v`` over one sweep is at most ``cfg.tol``.

    Parameters
    ----------
    C : array-like, shape (n, m)
        Non-negative cost matrix.
    mu : Marginals
        Strictly positive reference marginals.
    cfg : UotConfig, optional
    log_domain : bool or None
        Force or forbid the stabilized solver; ``None`` picks automatically.

    Returns
    -------
    TransportPlan
        ``objective`` holds the full regularized objective value.
    """
    cfg = cfg or UotConfig()
    C = check_cost(C)
    if not isinstance(mu, Marginals):
        mu = Marginals(*mu)
    _check_shapes(C, mu)
    if np.any(mu.p <= 0) or np.any(mu.q <= 0):
        raise ValueError("unbalanced solver needs strictly positive marginals")
    eps, tau = float(cfg.epsilon), float(cfg.tau)

    if tau == 0:
        # scaling exponent is zero: u = v = 1
        P, it, converged = np.exp(-C / eps), 0, True
    elif _use_log_domain(C, eps, log_domain):
        f, g, it, converged = _kernels.sinkhorn_potentials(
            np.ascontiguousarray(C), np.log(mu.p), np.log(mu.q), eps, tau / (tau + eps),
            int(cfg.max_iter), float(cfg.tol), False)
        P = np.exp((f[:, None] + g[None, :] - C) / eps)
    else:
        P, it, converged = _linear_scaling(_linear_kernel(C, eps), mu.p, mu.q, tau / (tau + eps),
                                           cfg.max_iter, cfg.tol, False)
    rr, cr = _residuals(P, mu)
    return TransportPlan(P, int(it), rr, cr, uot_objective(P, C, mu, cfg), bool(converged))


def kl_generalized(a, b):
    """``sum a log(a / b) - a + b`` for non-negative vectors (``0 log 0 = 0``)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.sum(xlogy(a, a) - xlogy(a, b) - a + b))


def entropy_term(P):
    P = np.asarray(P, dtype=np.float64)
    return float(np.sum(xlogy(P, P) - P))


def uot_objective(plan, C, mu, cfg):
    """Regularized objective value of ``plan`` (balanced marginals not required)."""
    P = _plan_array(plan)
    C = np.asarray(C, dtype=np.float64)
    if not isinstance(mu, Marginals):
        mu = Marginals(*mu)
    if P.shape != C.shape:
        raise ValueError(f"plan shape {P.shape} does not match cost shape {C.shape}")
    _check_shapes(C, mu)
    if np.any(P < 0):
        raise ValueError("plan has negative entries")
    val = float(np.sum(P * C)) + cfg.epsilon * entropy_term(P)
    if cfg.tau:
        val += cfg.tau * (kl_generalized(P.sum(axis=1), mu.p) + kl_generalized(P.sum(axis=0), mu.q))
    return val


def transport_cost(plan, C):
    """Frobenius inner product ``<P, C>``."""
    P = _plan_array(plan)
    C = np.asarray(C, dtype=np.float64)
    if P.shape != C.shape:
        raise ValueError(f"plan shape {P.shape} does not match cost shape {C.shape}")
    return float(np.sum(P * C))


def exact_ot_oracle(C):
    """Exact OT with uniform marginals by enumerating permutation couplings.

    Only for square instances with ``n <= 8``. Ties resolve to the
    lexicographically smallest permutation.
    """
    C = check_cost(C)
    n, m = C.shape
    if n != m:
        raise ValueError(f"oracle needs a square cost matrix, got {C.shape}")
    if n > 8:
        raise ValueError(f"oracle limited to n <= 8, got {n}")
    idx = np.arange(n)
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        total = C[idx, perm].sum()
        if total < best:
            best, best_perm = total, perm
    plan = np.zeros((n, n))
    plan[idx, best_perm] = 1.0 / n
    return plan, float(best / n)


def exact_uot_oracle(C, mu, cfg, max_iter=500, gtol=1e-10):
    """Minimize the regularized objective directly by damped Newton steps.

    The objective is strictly convex in the plan; steps are shortened so every
    entry stays positive (at most a 90% decrease per step) and the objective
    does not increase. Independent of the scaling iterations.

    Returns ``(plan, objective, converged)``.
    """
    C = check_cost(C)
    if not isinstance(mu, Marginals):
        mu = Marginals(*mu)
    _check_shapes(C, mu)
    n, m = C.shape
    if n * m > 16:
        raise ValueError(f"oracle limited to n*m <= 16, got {n * m}")
    eps, tau = cfg.epsilon, cfg.tau
    R = np.kron(np.eye(n), np.ones((1, m)))  # row sums of the flattened plan
    S = np.kron(np.ones((1, n)), np.eye(m))  # column sums

    def grad(P):
        r, c = P.sum(axis=1), P.sum(axis=0)
        G = C + eps * np.log(P)
        if tau:
            G = G + tau * np.log(r / mu.p)[:, None] + tau * np.log(c / mu.q)[None, :]
        return G

    def obj(P):
        return uot_objective(P, C, mu, cfg)

    P = np.outer(mu.p, mu.q)
    converged = False
    for _ in range(max_iter):
        G = grad(P)
        if np.max(np.abs(G)) <= gtol:
            converged = True
            break
        x = P.ravel()
        H = np.diag(eps / np.maximum(x, np.finfo(float).tiny))
        if tau:
            H += tau * (R.T @ np.diag(1.0 / (R @ x)) @ R + S.T @ np.diag(1.0 / (S @ x)) @ S)
        d = -np.linalg.solve(H, G.ravel())
        neg = d < 0
        t = min(1.0, float(np.min(0.9 * x[neg] / -d[neg]))) if np.any(neg) else 1.0
        decrement = -float(G.ravel() @ d)
        if decrement > 1e-14:
            f0 = obj(P)
            while t > 1e-12 and obj((x + t * d).reshape(n, m)) > f0 - 1e-4 * t * decrement:
                t *= 0.5
        P = (x + t * d).reshape(n, m)
    return P, obj(P), converged
