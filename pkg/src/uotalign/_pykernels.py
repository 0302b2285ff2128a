"""Pure-Python/numpy versions of the hot kernels.

Same algorithms and stopping rules as the compiled ``_core`` extension. Results
agree with it up to floating-point summation order.
"""
import numpy as np
from scipy.special import logsumexp

KERNEL_FLOOR = -600.0


def dtw_accumulate(X, Y):
    """Accumulated-cost matrix of the classic DTW recursion (Euclidean steps)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n, m = len(X), len(Y)
    step = np.sqrt(((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=-1)).tolist()
    D = [[0.0] * m for _ in range(n)]
    for i in range(n):
        row, prev, c = D[i], D[i - 1] if i else None, step[i]
        for j in range(m):
            if i == 0 and j == 0:
                row[j] = c[j]
            elif i == 0:
                row[j] = c[j] + row[j - 1]
            elif j == 0:
                row[j] = c[j] + prev[j]
            else:
                best = prev[j - 1]
                if prev[j] < best:
                    best = prev[j]
                if row[j - 1] < best:
                    best = row[j - 1]
                row[j] = c[j] + best
    return np.array(D, dtype=np.float64).reshape(n, m)


def dtw_backtrack(D):
    """Optimal warping path from (0, 0) to (n-1, m-1); ties prefer diagonal, then up, then left."""
    D = np.asarray(D)
    i, j = D.shape[0] - 1, D.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            dg, up, lf = D[i - 1, j - 1], D[i - 1, j], D[i, j - 1]
            if dg <= up and dg <= lf:
                i, j = i - 1, j - 1
            elif up <= lf:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return path


def _row_potential(C, g, log_p, eps, kappa):
    return kappa * eps * (log_p - logsumexp((g[None, :] - C) / eps, axis=1))


def _col_potential(C, f, log_q, eps, kappa):
    return kappa * eps * (log_q - logsumexp((f[:, None] - C) / eps, axis=0))


def _kernel(C, f, g, eps):
    # flush entries below exp(KERNEL_FLOOR) to zero, as the compiled kernel does
    t = (f[:, None] + g[None, :] - C) / eps
    return np.where(t > KERNEL_FLOOR, np.exp(t), 0.0)


def sinkhorn_potentials(C, log_p, log_q, eps, kappa, max_iter, tol, balanced, absorb=50.0):
    """Stabilized (absorbing) Sinkhorn scaling on dual potentials.

    Rows or columns whose log-scaling leaves ``[-absorb, absorb]``, or whose
    kernel sum underflows, are folded into their potential immediately.
    Returns ``(f, g, iterations, converged)`` with the plan given by
    ``exp((f_i + g_j - C_ij) / eps)``.
    """
    C = np.asarray(C, dtype=np.float64)
    log_p = np.asarray(log_p, dtype=np.float64)
    log_q = np.asarray(log_q, dtype=np.float64)
    n, m = C.shape
    if len(log_p) != n or len(log_q) != m:
        raise ValueError("marginal lengths do not match the cost matrix")

    f = _row_potential(C, np.zeros(m), log_p, eps, kappa)
    g = _col_potential(C, f, log_q, eps, kappa)
    K = _kernel(C, f, g, eps)
    lu, lv = np.zeros(n), np.zeros(m)
    u, v = np.ones(n), np.ones(m)
    converged = False

    it = 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        while it < max_iter:
            it += 1
            Kv = K @ v
            bad = ~((Kv > 0) & np.isfinite(Kv))
            lkv = np.log(Kv)
            if bad.any():
                lkv[bad] = logsumexp((f[bad, None] + g[None, :] - C[bad]) / eps + lv[None, :], axis=1)
            if balanced and np.max(np.abs(np.exp(lu + lkv) - np.exp(log_p))) <= tol:
                converged = True
                it -= 1
                break
            lu_new = kappa * log_p + (kappa - 1.0) * f / eps - kappa * lkv
            err = np.max(np.abs(lu_new - lu))
            fold = bad | (np.abs(lu_new) > absorb)
            f = np.where(fold, f + eps * lu_new, f)
            lu = np.where(fold, 0.0, lu_new)
            u = np.exp(lu)
            if fold.any():
                K[fold] = _kernel(C[fold], f[fold], g, eps)

            Ktu = K.T @ u
            bad = ~((Ktu > 0) & np.isfinite(Ktu))
            lktu = np.log(Ktu)
            if bad.any():
                lktu[bad] = logsumexp((f[:, None] + g[None, bad] - C[:, bad]) / eps + lu[:, None], axis=0)
            lv_new = kappa * log_q + (kappa - 1.0) * g / eps - kappa * lktu
            err = max(err, np.max(np.abs(lv_new - lv)))
            fold = bad | (np.abs(lv_new) > absorb)
            g = np.where(fold, g + eps * lv_new, g)
            lv = np.where(fold, 0.0, lv_new)
            v = np.exp(lv)
            if fold.any():
                K[:, fold] = _kernel(C[:, fold], f, g[fold], eps)

            if not balanced and err <= tol:
                converged = True
                break

    return f + eps * lu, g + eps * lv, it, converged


def sinkhorn_scaling(K, p, q, kappa, max_iter, tol, balanced):
    """Linear-domain scaling on a precomputed kernel.

    Returns ``(u, v, iterations, converged, finite)``; ``finite`` is False when a
    scaling factor overflowed or a kernel row/column sum vanished.
    """
    K = np.asarray(K, dtype=np.float64)
    if len(p) != K.shape[0] or len(q) != K.shape[1]:
        raise ValueError("marginal lengths do not match the kernel")
    u, v = np.ones(K.shape[0]), np.ones(K.shape[1])
    converged, it = False, 0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        while it < max_iter:
            it += 1
            Kv = K @ v
            if balanced and np.max(np.abs(u * Kv - p)) <= tol:
                converged, it = True, it - 1
                break
            u_new = (p / Kv) ** kappa
            if not np.all(np.isfinite(u_new) & (u_new > 0)):
                return u, v, it, False, False
            err = np.max(np.abs(np.log(u_new) - np.log(u)))
            u = u_new
            v_new = (q / (K.T @ u)) ** kappa
            if not np.all(np.isfinite(v_new) & (v_new > 0)):
                return u, v, it, False, False
            err = max(err, np.max(np.abs(np.log(v_new) - np.log(v))))
            v = v_new
            if not balanced and err <= tol:
                converged = True
                break
    return u, v, it, converged, True
