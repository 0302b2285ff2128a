# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: DTW dynamic program and stabilized Sinkhorn scaling loop.

Both functions mirror :mod:`uotalign._pykernels` exactly; the Python module is
the reference and the one used when this extension is not built.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, INFINITY, isfinite

from scipy.linalg.cython_blas cimport dgemv

cnp.import_array()

cdef double KERNEL_FLOOR = -600.0


cdef inline void _kv(const double[:, ::1] K, double[::1] x, double[::1] y, bint transpose) noexcept nogil:
    # y = K x (or K^T x); a C-ordered n x m matrix is the Fortran m x n matrix K^T
    cdef int n = <int>K.shape[0], m = <int>K.shape[1], one = 1
    cdef double alpha = 1.0, beta = 0.0
    cdef char trans = b'N' if transpose else b'T'
    dgemv(&trans, &m, &n, &alpha, <double*>&K[0, 0], &m, &x[0], &one, &beta, &y[0], &one)


def dtw_accumulate(const double[:, ::1] X, const double[:, ::1] Y):
    """Accumulated-cost matrix of the classic DTW recursion (Euclidean steps)."""
    cdef Py_ssize_t n = X.shape[0], m = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double c, diff, best
    D_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] D = D_arr
    for i in range(n):
        for j in range(m):
            c = 0.0
            for k in range(d):
                diff = X[i, k] - Y[j, k]
                c += diff * diff
            c = sqrt(c)
            if i == 0 and j == 0:
                D[i, j] = c
            elif i == 0:
                D[i, j] = c + D[i, j - 1]
            elif j == 0:
                D[i, j] = c + D[i - 1, j]
            else:
                best = D[i - 1, j - 1]
                if D[i - 1, j] < best:
                    best = D[i - 1, j]
                if D[i, j - 1] < best:
                    best = D[i, j - 1]
                D[i, j] = c + best
    return D_arr


def dtw_backtrack(const double[:, ::1] D):
    """Optimal warping path from (0, 0) to (n-1, m-1); ties prefer diagonal, then up, then left."""
    cdef Py_ssize_t i = D.shape[0] - 1, j = D.shape[1] - 1
    cdef double dg, up, lf
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            dg = D[i - 1, j - 1]
            up = D[i - 1, j]
            lf = D[i, j - 1]
            if dg <= up and dg <= lf:
                i -= 1
                j -= 1
            elif up <= lf:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return path


cdef void _rebuild_kernel(const double[:, ::1] C, double[::1] f, double[::1] g,
                          double eps, double[:, ::1] Kt) noexcept nogil:
    # entries below exp(KERNEL_FLOOR) are flushed to zero: subnormal operands
    # slow the matrix-vector products by an order of magnitude
    cdef Py_ssize_t i, j
    cdef double t
    for i in range(C.shape[0]):
        for j in range(C.shape[1]):
            t = (f[i] + g[j] - C[i, j]) / eps
            Kt[i, j] = exp(t) if t > KERNEL_FLOOR else 0.0


cdef void _lse_rows(const double[:, ::1] C, double[::1] g, double eps,
                    double[::1] out) noexcept nogil:
    # out_i = LSE_j((g_j - C_ij) / eps)
    cdef Py_ssize_t i, j
    cdef double mx, s, t
    for i in range(C.shape[0]):
        mx = -INFINITY
        for j in range(C.shape[1]):
            t = (g[j] - C[i, j]) / eps
            if t > mx:
                mx = t
        s = 0.0
        for j in range(C.shape[1]):
            s += exp((g[j] - C[i, j]) / eps - mx)
        out[i] = mx + log(s)


cdef void _lse_cols(const double[:, ::1] C, double[::1] f, double eps,
                    double[::1] out) noexcept nogil:
    # out_j = LSE_i((f_i - C_ij) / eps)
    cdef Py_ssize_t i, j
    cdef double mx, s, t
    for j in range(C.shape[1]):
        mx = -INFINITY
        for i in range(C.shape[0]):
            t = (f[i] - C[i, j]) / eps
            if t > mx:
                mx = t
        s = 0.0
        for i in range(C.shape[0]):
            s += exp((f[i] - C[i, j]) / eps - mx)
        out[j] = mx + log(s)


cdef void _absorb(double[::1] pot, double[::1] lsc, double[::1] sc, double eps) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(pot.shape[0]):
        pot[i] += eps * lsc[i]
        lsc[i] = 0.0
        sc[i] = 1.0


cdef double _lse_row(const double[:, ::1] C, double[::1] f, double[::1] g,
                     double[::1] lv, Py_ssize_t i, double eps) noexcept nogil:
    # log of row i of the scaled kernel times v, without forming the kernel
    cdef Py_ssize_t j
    cdef double mx = -INFINITY, s = 0.0, t
    for j in range(C.shape[1]):
        t = (f[i] + g[j] - C[i, j]) / eps + lv[j]
        if t > mx:
            mx = t
    for j in range(C.shape[1]):
        s += exp((f[i] + g[j] - C[i, j]) / eps + lv[j] - mx)
    return mx + log(s)


cdef double _lse_col(const double[:, ::1] C, double[::1] f, double[::1] g,
                     double[::1] lu, Py_ssize_t j, double eps) noexcept nogil:
    cdef Py_ssize_t i
    cdef double mx = -INFINITY, s = 0.0, t
    for i in range(C.shape[0]):
        t = (f[i] + g[j] - C[i, j]) / eps + lu[i]
        if t > mx:
            mx = t
    for i in range(C.shape[0]):
        s += exp((f[i] + g[j] - C[i, j]) / eps + lu[i] - mx)
    return mx + log(s)


cdef void _rebuild_row(const double[:, ::1] C, double[::1] f, double[::1] g,
                       double eps, double[:, ::1] Kt, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t j
    cdef double t
    for j in range(C.shape[1]):
        t = (f[i] + g[j] - C[i, j]) / eps
        Kt[i, j] = exp(t) if t > KERNEL_FLOOR else 0.0


cdef void _rebuild_col(const double[:, ::1] C, double[::1] f, double[::1] g,
                       double eps, double[:, ::1] Kt, Py_ssize_t j) noexcept nogil:
    cdef Py_ssize_t i
    cdef double t
    for i in range(C.shape[0]):
        t = (f[i] + g[j] - C[i, j]) / eps
        Kt[i, j] = exp(t) if t > KERNEL_FLOOR else 0.0


def sinkhorn_potentials(const double[:, ::1] C, const double[::1] log_p,
                        const double[::1] log_q, double eps, double kappa,
                        int max_iter, double tol, bint balanced,
                        double absorb=50.0):
    """Stabilized (absorbing) Sinkhorn scaling on dual potentials.

    The kernel is kept relative to the potentials ``f, g``; a row (column)
    whose log-scaling leaves ``[-absorb, absorb]`` is folded into its
    potential at once. Rows whose kernel sum underflows get their log-sum
    computed exactly and are folded in the same way, so far-away samples
    with vanishing mass do not stall convergence.

    Returns ``(f, g, iterations, converged)`` with the plan given by
    ``exp((f_i + g_j - C_ij) / eps)``.
    """
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], i, j
    cdef int it
    cdef double err, lu, lv, mass_err, t
    cdef bint bad, converged = False
    if log_p.shape[0] != n or log_q.shape[0] != m:
        raise ValueError("marginal lengths do not match the cost matrix")

    f_arr = np.zeros(n)
    g_arr = np.zeros(m)
    cdef double[::1] f = f_arr, g = g_arr
    cdef double[::1] lu_arr = np.zeros(n), lv_arr = np.zeros(m)
    cdef double[::1] Kv = np.empty(n), Ktu = np.empty(m), lse = np.empty(max(n, m))
    cdef double[::1] u = np.ones(n), v = np.ones(m)
    cdef double[:, ::1] Kt = np.empty((n, m))

    # log-domain half steps so every row and column of the kernel carries an O(1) entry
    _lse_rows(C, g, eps, lse)
    for i in range(n):
        f[i] = kappa * eps * (log_p[i] - lse[i])
    _lse_cols(C, f, eps, lse)
    for j in range(m):
        g[j] = kappa * eps * (log_q[j] - lse[j])
    _rebuild_kernel(C, f, g, eps, Kt)

    it = 0
    while it < max_iter:
        it += 1
        # row update
        _kv(Kt, v, Kv, False)
        for i in range(n):
            if Kv[i] > 0.0 and isfinite(Kv[i]):
                lse[i] = log(Kv[i])
            else:
                lse[i] = _lse_row(C, f, g, lv_arr, i, eps)
        if balanced:
            mass_err = 0.0
            for i in range(n):
                t = fabs(exp(lu_arr[i] + lse[i]) - exp(log_p[i]))
                if t > mass_err:
                    mass_err = t
            if mass_err <= tol:
                converged = True
                it -= 1
                break
        err = 0.0
        for i in range(n):
            bad = not (Kv[i] > 0.0 and isfinite(Kv[i]))
            lu = kappa * log_p[i] + (kappa - 1.0) * f[i] / eps - kappa * lse[i]
            t = fabs(lu - lu_arr[i])
            if t > err:
                err = t
            if bad or fabs(lu) > absorb:
                f[i] += eps * lu
                lu_arr[i] = 0.0
                u[i] = 1.0
                _rebuild_row(C, f, g, eps, Kt, i)
            else:
                lu_arr[i] = lu
                u[i] = exp(lu)
        # column update
        _kv(Kt, u, Ktu, True)
        for j in range(m):
            bad = not (Ktu[j] > 0.0 and isfinite(Ktu[j]))
            if bad:
                lv = _lse_col(C, f, g, lu_arr, j, eps)
            else:
                lv = log(Ktu[j])
            lv = kappa * log_q[j] + (kappa - 1.0) * g[j] / eps - kappa * lv
            t = fabs(lv - lv_arr[j])
            if t > err:
                err = t
            if bad or fabs(lv) > absorb:
                g[j] += eps * lv
                lv_arr[j] = 0.0
                v[j] = 1.0
                _rebuild_col(C, f, g, eps, Kt, j)
            else:
                lv_arr[j] = lv
                v[j] = exp(lv)
        if not balanced and err <= tol:
            converged = True
            break

    _absorb(f, lu_arr, u, eps)
    _absorb(g, lv_arr, v, eps)
    return f_arr, g_arr, it, converged


def sinkhorn_scaling(const double[:, ::1] K, const double[::1] p, const double[::1] q,
                     double kappa, int max_iter, double tol, bint balanced):
    """Linear-domain scaling on a precomputed kernel.

    Returns ``(u, v, iterations, converged, finite)``; ``finite`` is False when a
    scaling factor overflowed or a kernel row/column sum vanished.
    """
    cdef Py_ssize_t n = K.shape[0], m = K.shape[1], i, j
    cdef int it = 0
    cdef double s, t, err, mass_err, un, vn
    cdef bint converged = False, finite = True
    if p.shape[0] != n or q.shape[0] != m:
        raise ValueError("marginal lengths do not match the kernel")
    u_arr = np.ones(n)
    v_arr = np.ones(m)
    cdef double[::1] u = u_arr, v = v_arr
    cdef double[::1] Kv = np.empty(n), Ktu = np.empty(m)
    while it < max_iter:
        it += 1
        _kv(K, v, Kv, False)
        if balanced:
            mass_err = 0.0
            for i in range(n):
                t = fabs(u[i] * Kv[i] - p[i])
                if t > mass_err:
                    mass_err = t
            if mass_err <= tol:
                converged = True
                it -= 1
                break
        err = 0.0
        for i in range(n):
            un = (p[i] / Kv[i]) ** kappa
            if not (isfinite(un) and un > 0.0):
                finite = False
                break
            t = fabs(log(un) - log(u[i]))
            if t > err:
                err = t
            u[i] = un
        if not finite:
            break
        _kv(K, u, Ktu, True)
        for j in range(m):
            vn = (q[j] / Ktu[j]) ** kappa
            if not (isfinite(vn) and vn > 0.0):
                finite = False
                break
            t = fabs(log(vn) - log(v[j]))
            if t > err:
                err = t
            v[j] = vn
        if not finite:
            break
        if not balanced and err <= tol:
            converged = True
            break
    return u_arr, v_arr, it, converged, finite
