"""Paired mini-batch construction for the alignment loss.

``ours`` draws a (source, target) trajectory pair per batch element with
probability proportional to its DTW weight, a uniform source step, and a
target step uniformly from the window of steps at most ``winsize - 1`` away
from the DTW-matched step (the window is cut at the trajectory ends). ``no_sampler`` draws
both sides independently and uniformly. ``oracle`` pairs every source step
with the target-domain rendering of the very same state.
"""
from dataclasses import dataclass

import numpy as np

MODES = ("ours", "no_sampler", "oracle")


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "ours"
    winsize: object = 10  # int >= 1 or "off"
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown sampler mode {self.mode!r}; expected one of {MODES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.winsize != "off" and (not isinstance(self.winsize, (int, np.integer)) or self.winsize < 1):
            raise ValueError(f"winsize must be an int >= 1 or 'off', got {self.winsize!r}")


@dataclass
class PairedBatch:
    src: tuple  # (obs, proprio, actions), each (B, dim)
    tgt: tuple
    provenance: np.ndarray  # (B, 4): src_traj, src_t, tgt_traj, tgt_t

    def __len__(self):
        return len(self.provenance)


class _PairTable:
    """Cumulative table for repeated weighted pair draws."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("pair weights must be non-negative with at least one positive entry")
        self.shape = w.shape
        self.cdf = np.cumsum(w.ravel())
        self.total = self.cdf[-1]

    def draw(self, rng, size=None):
        u = rng.random(size) * self.total
        flat = np.searchsorted(self.cdf, u, side="right")
        flat = np.minimum(flat, len(self.cdf) - 1)
        return np.unravel_index(flat, self.shape)


def _weights_of(weights):
    return weights.weights if hasattr(weights, "weights") else np.asarray(weights, dtype=np.float64)


def sample_pair(weights, rng):
    """Draw ``(k, l)`` with probability ``w[k, l] / sum(w)``."""
    k, l = _PairTable(_weights_of(weights)).draw(rng)
    return int(k), int(l)


def sample_pairs(weights, rng, size):
    k, l = _PairTable(_weights_of(weights)).draw(rng, size)
    return k.astype(np.int64), l.astype(np.int64)


def match_step(path, t_src):
    """Smallest target index aligned with source index ``t_src`` on a DTW path."""
    for i, j in path:
        if i == t_src:
            return j
    raise ValueError(f"source index {t_src} not on path")


def _match_table(path, n_src):
    table = np.full(n_src, -1, dtype=np.int64)
    for i, j in path:
        if table[i] < 0:
            table[i] = j
    return table


class FlatData:
    """All transitions of a dataset stacked row-wise, for fast batch gathers."""

    def __init__(self, trajectories):
        self.obs = np.concatenate([t.obs for t in trajectories])
        self.proprio = np.concatenate([t.proprio for t in trajectories])
        self.actions = np.concatenate([t.actions for t in trajectories])
        lens = np.array([len(t) for t in trajectories], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(lens)])

    def __len__(self):
        return int(self.offsets[-1])

    def index(self, traj, step):
        return self.offsets[traj] + step

    def take(self, idx):
        return self.obs[idx], self.proprio[idx], self.actions[idx]


class Sampler:
    """Stateful paired-batch sampler; one instance per training loop."""

    def __init__(self, D_src, D_tgt, weights, cfg, rng):
        if not D_src or not D_tgt:
            raise ValueError("datasets must be non-empty")
        self.D_src, self.D_tgt, self.cfg, self.rng = D_src, D_tgt, cfg, rng
        self.weights = weights
        if cfg.mode == "oracle" and any(t.shadow_obs is None for t in D_src):
            raise ValueError("oracle mode needs source trajectories with target-domain shadow observations")
        if cfg.mode == "ours":
            if weights is None:
                raise ValueError("mode 'ours' needs pair weights")
            self._table = _PairTable(_weights_of(weights))
            self._matches = {}
        self._src_lens = np.array([len(t) for t in D_src])
        self._tgt_lens = np.array([len(t) for t in D_tgt])
        self._src_flat = FlatData(D_src)
        self._tgt_flat = FlatData(D_tgt)
        if cfg.mode == "oracle":
            self._shadow = np.concatenate([t.shadow_obs for t in D_src])

    def _match(self, k, l):
        key = (k, l)
        if key not in self._matches:
            self._matches[key] = _match_table(self.weights.path(k, l), self._src_lens[k])
        return self._matches[key]

    def _flat_draw(self, lens, size):
        # uniform over all (trajectory, step) transitions
        offsets = np.concatenate([[0], np.cumsum(lens)])
        flat = self.rng.integers(0, offsets[-1], size)
        traj = np.searchsorted(offsets, flat, side="right") - 1
        return traj, flat - offsets[traj]

    def provenance(self):
        B, mode = self.cfg.batch_size, self.cfg.mode
        if mode == "no_sampler":
            ks, ts = self._flat_draw(self._src_lens, B)
            ls, us = self._flat_draw(self._tgt_lens, B)
        elif mode == "oracle":
            ks, ts = self._flat_draw(self._src_lens, B)
            ls, us = ks.copy(), ts.copy()
        else:
            ks, ls = self._table.draw(self.rng, B)
            u = self.rng.random(B)
            ts = np.floor(u * self._src_lens[ks]).astype(np.int64)
            if self.cfg.winsize == "off":
                us = np.floor(self.rng.random(B) * self._tgt_lens[ls]).astype(np.int64)
            else:
                half = int(self.cfg.winsize) - 1
                j = np.array([self._match(int(k), int(l))[t] for k, l, t in zip(ks, ls, ts)], dtype=np.int64)
                lo = np.maximum(j - half, 0)
                hi = np.minimum(j + half, self._tgt_lens[ls] - 1)
                us = lo + np.floor(self.rng.random(B) * (hi - lo + 1)).astype(np.int64)
        return np.stack([ks, ts, ls, us], axis=1).astype(np.int64)

    def batch_from(self, prov):
        prov = np.asarray(prov, dtype=np.int64)
        si = self._src_flat.index(prov[:, 0], prov[:, 1])
        src = self._src_flat.take(si)
        if self.cfg.mode == "oracle":
            tgt = (self._shadow[si], src[1].copy(), src[2].copy())
        else:
            tgt = self._tgt_flat.take(self._tgt_flat.index(prov[:, 2], prov[:, 3]))
        return PairedBatch(src, tgt, prov)

    def sample(self):
        return self.batch_from(self.provenance())


def replay(D_src, D_tgt, prov, oracle=False):
    """Rebuild a :class:`PairedBatch` from provenance rows."""
    prov = np.asarray(prov, dtype=np.int64)
    src = tuple(np.array([getattr(D_src[k], f)[t] for k, t, _, _ in prov])
                for f in ("obs", "proprio", "actions"))
    if oracle:
        tgt = (np.array([D_src[k].shadow_obs[t] for k, t, _, _ in prov]), src[1].copy(), src[2].copy())
    else:
        tgt = tuple(np.array([getattr(D_tgt[l], f)[u] for _, _, l, u in prov])
                    for f in ("obs", "proprio", "actions"))
    return PairedBatch(src, tgt, prov)


def sample_paired_batch(D_src, D_tgt, weights, cfg, rng):
    """One paired batch; see :class:`Sampler` for the modes."""
    return Sampler(D_src, D_tgt, weights, cfg, rng).sample()
