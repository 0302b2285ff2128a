"""Trajectory similarity by dynamic time warping over proprioceptive sequences."""
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

PATH_WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class DtwResult:
    distance: float
    path: list


def _as_sequence(X, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name}: expected a sequence of vectors, got shape {X.shape}")
    if len(X) == 0:
        raise ValueError(f"{name}: empty sequence")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return np.ascontiguousarray(X)


def dtw(X, Y):
    """DTW with Euclidean step cost; returns the distance and one optimal path.

    The path is recovered by backtracking from the end, preferring a diagonal
    step over an up step (``i-1``) over a left step (``j-1``) on ties.
    """
    X, Y = _as_sequence(X, "X"), _as_sequence(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    D = _kernels.dtw_accumulate(X, Y)
    return DtwResult(float(D[-1, -1]), [(int(i), int(j)) for i, j in _kernels.dtw_backtrack(D)])


def dtw_distance(X, Y):
    X, Y = _as_sequence(X, "X"), _as_sequence(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return float(_kernels.dtw_accumulate(X, Y)[-1, -1])


def _proprio(traj):
    return traj.proprio if hasattr(traj, "proprio") else traj


def normalized_dtw(xi_src, xi_tgt):
    """DTW distance of the proprio sequences divided by the longer length."""
    X, Y = _as_sequence(_proprio(xi_src), "xi_src"), _as_sequence(_proprio(xi_tgt), "xi_tgt")
    return dtw_distance(X, Y) / max(len(X), len(Y))


def weight_transform(d_bar):
    """Logistic sampling weight ``1 / (1 + exp(10 * (d_bar - 0.01)))``."""
    return 1.0 / (1.0 + np.exp(10.0 * (np.asarray(d_bar, dtype=np.float64) - 0.01)))


@dataclass
class PairWeights:
    weights: np.ndarray
    norm_dists: np.ndarray
    paths: dict = field(default_factory=dict)
    _proprio: tuple = field(default=None, repr=False)

    @property
    def shape(self):
        return self.weights.shape

    def path(self, k, l):
        """DTW path for pair ``(k, l)``; recomputed when it was not cached."""
        if (k, l) in self.paths:
            return self.paths[(k, l)]
        if self._proprio is None:
            raise KeyError(f"path for pair {(k, l)} not cached and no sequences attached")
        src, tgt = self._proprio
        return dtw(src[k], tgt[l]).path

    def paths_jsonl(self):
        lines = []
        for (k, l) in sorted(self.paths):
            lines.append(json.dumps({"src_idx": k, "tgt_idx": l, "path": [list(p) for p in self.paths[(k, l)]]}))
        return "\n".join(lines) + ("\n" if lines else "")


def build_pair_weights(D_src, D_tgt, path_floor=PATH_WEIGHT_FLOOR):
    """Normalized DTW distances and sampling weights for every (source, target) pair.

    Paths are kept only for pairs whose weight reaches ``path_floor``; the rest
    are recomputed on demand by :meth:`PairWeights.path`.
    """
    if len(D_src) == 0 or len(D_tgt) == 0:
        raise ValueError("both datasets must be non-empty")
    src = [_as_sequence(_proprio(t), "source trajectory") for t in D_src]
    tgt = [_as_sequence(_proprio(t), "target trajectory") for t in D_tgt]
    n, m = len(src), len(tgt)
    norm = np.empty((n, m))
    paths = {}
    for k in range(n):
        for l in range(m):
            D = _kernels.dtw_accumulate(src[k], tgt[l])
            norm[k, l] = D[-1, -1] / max(len(src[k]), len(tgt[l]))
            if weight_transform(norm[k, l]) >= path_floor:
                paths[(k, l)] = [(int(i), int(j)) for i, j in _kernels.dtw_backtrack(D)]
    return PairWeights(weight_transform(norm), norm, paths, (src, tgt))
