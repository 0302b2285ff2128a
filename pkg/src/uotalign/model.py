"""Tiny tanh encoder + affine policy with hand-written gradients.

Encoder ``z = W2 tanh(W1 o + b1) + b2``; policy ``a = Wp [z; x] + bp``.
Batches are row-major: one sample per row.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import joint_cost_matrix

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wp", "bp")


@dataclass(frozen=True)
class ModelDims:
    d_o: int = 16
    hidden: int = 32
    d_z: int = 8
    d_x: int = 2
    d_a: int = 2

    def shapes(self):
        return {
            "W1": (self.hidden, self.d_o), "b1": (self.hidden,),
            "W2": (self.d_z, self.hidden), "b2": (self.d_z,),
            "Wp": (self.d_a, self.d_z + self.d_x), "bp": (self.d_a,),
        }


@dataclass
class ModelParams:
    dims: ModelDims
    tensors: dict

    def __post_init__(self):
        shapes = self.dims.shapes()
        for name in PARAM_NAMES:
            arr = np.asarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise ValueError(f"{name}: shape {arr.shape}, expected {shapes[name]}")
            self.tensors[name] = arr

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self):
        return ModelParams(self.dims, {k: v.copy() for k, v in self.tensors.items()})

    def flat(self):
        return np.concatenate([self.tensors[n].ravel() for n in PARAM_NAMES])

    @classmethod
    def from_flat(cls, dims, vec):
        vec = np.asarray(vec, dtype=np.float64)
        out, i = {}, 0
        for name, shape in dims.shapes().items():
            size = int(np.prod(shape))
            out[name] = vec[i:i + size].reshape(shape).copy()
            i += size
        if i != len(vec):
            raise ValueError(f"flat vector has {len(vec)} entries, expected {i}")
        return cls(dims, out)

    @classmethod
    def zeros(cls, dims):
        return cls(dims, {n: np.zeros(s) for n, s in dims.shapes().items()})


def init_params(dims, rng):
    """Uniform in ``+-1/sqrt(fan_in)`` for each layer's weights and biases."""
    shapes = dims.shapes()
    out = {}
    for w, b in (("W1", "b1"), ("W2", "b2"), ("Wp", "bp")):
        bound = 1.0 / np.sqrt(shapes[w][1])
        out[w] = rng.uniform(-bound, bound, shapes[w])
        out[b] = rng.uniform(-bound, bound, shapes[b])
    return ModelParams(dims, out)


def _rows(a, dim, name):
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != dim:
        raise ValueError(f"{name}: dimension {a.shape[1]}, expected {dim}")
    return a, single


def _encoder_forward(params, O):
    H = np.tanh(O @ params["W1"].T + params["b1"])
    return H @ params["W2"].T + params["b2"], H


def _encoder_backward(params, O, H, dZ):
    dpre = (dZ @ params["W2"]) * (1.0 - H * H)
    return {"W1": dpre.T @ O, "b1": dpre.sum(axis=0), "W2": dZ.T @ H, "b2": dZ.sum(axis=0)}


def encode(params, o):
    """Latent ``z`` for one observation or a batch of them (rows)."""
    O, single = _rows(o, params.dims.d_o, "observation")
    Z, _ = _encoder_forward(params, O)
    return Z[0] if single else Z


def policy_forward(params, z, x):
    Z, single = _rows(z, params.dims.d_z, "latent")
    X, _ = _rows(x, params.dims.d_x, "proprio")
    if len(Z) != len(X):
        raise ValueError("latent and proprio batches differ in length")
    A = np.concatenate([Z, X], axis=1) @ params["Wp"].T + params["bp"]
    return A[0] if single else A


def _bc_terms(params, batch):
    O, X, A = (np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in batch)
    if len(O) == 0:
        raise ValueError("empty BC batch")
    Z, H = _encoder_forward(params, O)
    inp = np.concatenate([Z, X], axis=1)
    R = inp @ params["Wp"].T + params["bp"] - A
    return O, H, inp, R


def bc_loss(params, batch):
    """Mean over the batch of the squared action error; ``batch = (obs, proprio, actions)``."""
    _, _, _, R = _bc_terms(params, batch)
    return float(np.mean(np.sum(R * R, axis=1)))


def bc_loss_and_grads(params, batch):
    O, H, inp, R = _bc_terms(params, batch)
    B = len(O)
    dA = 2.0 * R / B
    grads = _encoder_backward(params, O, H, (dA @ params["Wp"])[:, :params.dims.d_z])
    grads["Wp"] = dA.T @ inp
    grads["bp"] = dA.sum(axis=0)
    return float(np.mean(np.sum(R * R, axis=1))), grads


def mmd_loss(Z_src, Z_tgt):
    """Squared distance between the mean embeddings of the two batches."""
    Z_src, Z_tgt = np.atleast_2d(Z_src), np.atleast_2d(Z_tgt)
    if len(Z_src) == 0 or len(Z_tgt) == 0:
        raise ValueError("empty embedding batch")
    d = Z_src.mean(axis=0) - Z_tgt.mean(axis=0)
    return float(d @ d)


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.1
    alpha1: float = 1.0
    alpha2: float = 1.0
    align: str = "uot"  # "uot" or "mmd"


@dataclass
class LossBreakdown:
    bc: float
    uot: float = 0.0
    mmd: float = 0.0
    total: float = field(default=0.0)


def alignment_cost(params, ot_batch, alpha1=1.0, alpha2=1.0):
    """Joint ground cost of a paired batch under the current encoder."""
    Zs = encode(params, ot_batch.src[0])
    Zt = encode(params, ot_batch.tgt[0])
    return joint_cost_matrix(Zs, ot_batch.src[1], Zt, ot_batch.tgt[1], alpha1, alpha2)


def _add(grads, extra, scale):
    for k, v in extra.items():
        grads[k] = grads[k] + scale * v


def total_loss_and_grads(params, bc_batch, ot_batch=None, plan=None, cfg=LossConfig()):
    """BC loss plus ``lam`` times the alignment term, with gradients.

    For ``cfg.align == "uot"`` the alignment term is ``<plan, C(params)>`` with
    the plan held fixed, so only the latent part of the cost carries gradient.
    For ``"mmd"`` it is :func:`mmd_loss` on the encoded batch.
    """
    bc, grads = bc_loss_and_grads(params, bc_batch)
    out = LossBreakdown(bc=bc)
    if ot_batch is not None and (plan is not None or cfg.align == "mmd"):
        Os, Xs = (np.asarray(a, dtype=np.float64) for a in ot_batch.src[:2])
        Ot, Xt = (np.asarray(a, dtype=np.float64) for a in ot_batch.tgt[:2])
        Zs, Hs = _encoder_forward(params, Os)
        Zt, Ht = _encoder_forward(params, Ot)
        if cfg.align == "mmd":
            d = Zs.mean(axis=0) - Zt.mean(axis=0)
            out.mmd = float(d @ d)
            dZs = np.broadcast_to(2.0 * d / len(Zs), Zs.shape)
            dZt = np.broadcast_to(-2.0 * d / len(Zt), Zt.shape)
        else:
            P = plan.plan if hasattr(plan, "plan") else np.asarray(plan, dtype=np.float64)
            C = joint_cost_matrix(Zs, Xs, Zt, Xt, cfg.alpha1, cfg.alpha2)
            if P.shape != C.shape:
                raise ValueError(f"plan shape {P.shape} does not match batch cost shape {C.shape}")
            out.uot = float(np.sum(P * C))
            dZs = 2.0 * cfg.alpha1 * (P.sum(axis=1)[:, None] * Zs - P @ Zt)
            dZt = 2.0 * cfg.alpha1 * (P.sum(axis=0)[:, None] * Zt - P.T @ Zs)
        g_src = _encoder_backward(params, Os, Hs, dZs)
        g_tgt = _encoder_backward(params, Ot, Ht, dZt)
        _add(grads, g_src, cfg.lam)
        _add(grads, g_tgt, cfg.lam)
    out.total = out.bc + cfg.lam * (out.mmd if cfg.align == "mmd" else out.uot)
    return out, grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(a) for k, a in params.tensors.items()},
                   {k: np.zeros_like(a) for k, a in params.tensors.items()})


def adam_step(params, grads, state, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    b1, b2 = betas
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    for k in PARAM_NAMES:
        g = grads[k]
        if g.shape != params[k].shape or state.m[k].shape != g.shape:
            raise ValueError(f"{k}: gradient/state shape mismatch")
        new_m[k] = b1 * state.m[k] + (1 - b1) * g
        new_v[k] = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = new_m[k] / (1 - b1 ** t)
        v_hat = new_v[k] / (1 - b2 ** t)
        new_p[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return ModelParams(params.dims, new_p), AdamState(new_m, new_v, t)


def save_checkpoint(path, params, state=None, extra=None):
    d = params.dims
    rec = {
        "dims": {"d_o": d.d_o, "hidden": d.hidden, "d_z": d.d_z, "d_x": d.d_x, "d_a": d.d_a},
        "params": {k: params[k].ravel().tolist() for k in PARAM_NAMES},
        "shapes": {k: list(s) for k, s in d.shapes().items()},
    }
    if state is not None:
        rec["optimizer"] = {"t": state.t,
                            "m": {k: state.m[k].ravel().tolist() for k in PARAM_NAMES},
                            "v": {k: state.v[k].ravel().tolist() for k in PARAM_NAMES}}
    if extra:
        rec["meta"] = extra
    with open(path, "w") as fh:
        json.dump(rec, fh)


def load_checkpoint(path):
    """Returns ``(params, adam_state or None, meta dict)``."""
    with open(path) as fh:
        rec = json.load(fh)
    dims = ModelDims(**rec["dims"])
    shapes = dims.shapes()
    params = ModelParams(dims, {k: np.array(rec["params"][k]).reshape(shapes[k]) for k in PARAM_NAMES})
    state = None
    if "optimizer" in rec:
        o = rec["optimizer"]
        state = AdamState({k: np.array(o["m"][k]).reshape(shapes[k]) for k in PARAM_NAMES},
                          {k: np.array(o["v"][k]).reshape(shapes[k]) for k in PARAM_NAMES}, int(o["t"]))
    return params, state, rec.get("meta", {})
