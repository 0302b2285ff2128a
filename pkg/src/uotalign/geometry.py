"""Vector/matrix helpers, squared-Euclidean distances and the joint ground cost."""
import csv
import io

import numpy as np


def as_vec(values):
    """Return ``values`` as a finite 1-D float array."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains NaN or Inf")
    return v


def as_matrix(values, name="matrix"):
    """Return a finite 2-D float array; a list of vectors becomes its rows."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return a


def sq_euclid(u, v):
    """Squared Euclidean distance between two vectors of equal dimension."""
    u, v = as_vec(u), as_vec(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    d = u - v
    return float(d @ d)


def pairwise_sq_euclid(A, B):
    """Matrix of squared distances ``||A_i - B_j||^2``."""
    A, B = np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    # direct differences: exact zeros on identical rows, unlike the Gram expansion
    out = np.zeros((A.shape[0], B.shape[0]))
    for k in range(A.shape[1]):
        d = A[:, k, None] - B[None, :, k]
        out += d * d
    return out


def joint_cost_matrix(Z_src, X_src, Z_tgt, X_tgt, alpha1=1.0, alpha2=1.0):
    """Ground cost over (latent, proprioception) pairs.

    ``C[i, j] = alpha1 * ||Z_src[i] - Z_tgt[j]||^2 + alpha2 * ||X_src[i] - X_tgt[j]||^2``

    Parameters
    ----------
    Z_src, Z_tgt : array-like, shape (n, d_z) and (m, d_z)
        Encoded observations of the source and target samples.
    X_src, X_tgt : array-like, shape (n, d_x) and (m, d_x)
        Proprioceptive states of the same samples.
    alpha1, alpha2 : float
        Non-negative weights of the latent and proprioceptive terms.

    Returns
    -------
    C : ndarray, shape (n, m)
    """
    if alpha1 < 0 or alpha2 < 0:
        raise ValueError(f"cost weights must be non-negative, got {alpha1}, {alpha2}")
    Z_src, X_src = as_matrix(Z_src, "Z_src"), as_matrix(X_src, "X_src")
    Z_tgt, X_tgt = as_matrix(Z_tgt, "Z_tgt"), as_matrix(X_tgt, "X_tgt")
    if len(Z_src) != len(X_src) or len(Z_tgt) != len(X_tgt):
        raise ValueError("latent and proprio lists must have equal lengths per domain")
    C = alpha1 * pairwise_sq_euclid(Z_src, Z_tgt)
    if alpha2 != 0:
        C = C + alpha2 * pairwise_sq_euclid(X_src, X_tgt)
    return C


def check_cost(C):
    C = as_matrix(C, "cost")
    if np.any(C < 0):
        raise ValueError("cost matrix has negative entries")
    return C


def write_matrix_csv(path_or_buf, M):
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    close = False
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        path_or_buf = open(path_or_buf, "w", newline="")
        close = True
    try:
        w = csv.writer(path_or_buf, lineterminator="\n")
        for row in M:
            w.writerow([repr(float(x)) for x in row])
    finally:
        if close:
            path_or_buf.close()


def read_matrix_csv(path_or_buf):
    """Read a row-major numeric CSV into a 2-D array; raises ValueError on bad input."""
    if isinstance(path_or_buf, str) and "\n" in path_or_buf:
        path_or_buf = io.StringIO(path_or_buf)
    close = False
    if not hasattr(path_or_buf, "read"):
        path_or_buf = open(path_or_buf, newline="")
        close = True
    try:
        rows = [r for r in csv.reader(path_or_buf) if r and any(c.strip() for c in r)]
    finally:
        if close:
            path_or_buf.close()
    if not rows:
        raise ValueError("empty CSV")
    try:
        data = [[float(c) for c in r] for r in rows]
    except ValueError as exc:
        raise ValueError(f"unparseable CSV entry: {exc}") from None
    if len({len(r) for r in data}) != 1:
        raise ValueError("ragged CSV rows")
    return np.array(data, dtype=np.float64)
