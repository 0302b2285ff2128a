"""Joint BC + alignment training loop, baselines and evaluation."""
import csv
import io
import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import _rng
from .dtw_align import build_pair_weights
from .geometry import joint_cost_matrix
from .model import (AdamState, LossConfig, ModelDims, adam_step, encode, init_params,
                    policy_forward, total_loss_and_grads)
from .ot_solvers import Marginals, UotConfig, sinkhorn_unbalanced
from .sampler import FlatData, Sampler, SamplerConfig
from .synthdata import REACH_TOL, expert_action, generate, make_emissions

log = logging.getLogger(__name__)

METHODS = ("ours", "cotrain", "mmd", "source_only", "target_only")
METRIC_FIELDS = ("step", "bc_loss", "uot_loss", "align_err_id", "align_err_ood",
                 "action_mse_ood", "success_rate_id", "success_rate_ood")
SKIP_LIMIT = 0.01
LR_SCHEDULES = ("constant", "cosine")
COLLAPSE_VAR = 1e-4


@dataclass(frozen=True)
class TrainConfig:
    method: str = "ours"
    lam: float = 0.1
    bc_batch: int = 256
    ot_batch: int = 128
    cotrain_ratio: float = 0.9
    uot: UotConfig = field(default_factory=UotConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    steps: int = 5000
    eval_every: int = 500
    seed: int = 0
    lr: float = 0.01
    lr_schedule: str = "cosine"  # or "constant"; cosine decays to 0 at the last step
    # the latent gap is O(1) while UOT mass decays like exp(-cost / (2 tau)), so
    # alpha1 is kept small; a large alpha2 makes the plan match on proprio
    alpha1: float = 0.1
    alpha2: float = 10.0
    hidden: int = 32
    d_z: int = 8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0.0 <= self.cotrain_ratio <= 1.0:
            raise ValueError("cotrain_ratio must lie in [0, 1]")
        if self.bc_batch < 1 or self.ot_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.steps < 0 or self.eval_every < 1:
            raise ValueError("steps >= 0 and eval_every >= 1 required")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.lr <= 0 or self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("lr > 0 and alpha1, alpha2 >= 0 required")

    @property
    def effective_lambda(self):
        return self.lam if self.method in ("ours", "mmd") else 0.0

    @property
    def effective_ratio(self):
        return {"source_only": 1.0, "target_only": 0.0}.get(self.method, self.cotrain_ratio)


@dataclass
class MetricsLog:
    records: list = field(default_factory=list)
    skipped_steps: int = 0
    total_steps: int = 0

    @property
    def failed(self):
        return self.total_steps > 0 and self.skipped_steps > SKIP_LIMIT * self.total_steps

    @property
    def final(self):
        return self.records[-1]

    def append(self, rec):
        if self.records and rec["step"] <= self.records[-1]["step"]:
            raise ValueError("metrics steps must increase")
        bad = [k for k in METRIC_FIELDS[1:] if not np.isfinite(rec[k])]
        if bad:
            raise FloatingPointError(f"non-finite metrics at step {rec['step']}: {bad}")
        self.records.append(rec)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in self.records:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in METRIC_FIELDS[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != METRIC_FIELDS:
            raise ValueError("not a metrics CSV")
        out = cls()
        for row in rows[1:]:
            out.records.append({"step": int(row[0]), **{k: float(v) for k, v in zip(METRIC_FIELDS[1:], row[1:])}})
        return out


class EvalSuite:
    """Fixed probes, emission maps and expert settings used for evaluation."""

    def __init__(self, probes, bench, emissions=None):
        self.bench = bench
        self.emissions = emissions or make_emissions(bench)
        self.id = probes.select("target")
        self.ood = probes.select("target_ood")
        if len(self.id) == 0 or len(self.ood) == 0:
            raise ValueError("probes must cover both the target and target_ood regions")
        self.probes = probes


def eval_alignment(params, probes):
    """Mean squared latent gap between paired source/target renderings, per region."""
    out = []
    for region in ("target", "target_ood"):
        sel = probes.select(region)
        if len(sel) == 0:
            raise ValueError(f"no probes in region {region!r}")
        d = encode(params, sel.o_src) - encode(params, sel.o_tgt)
        out.append(float(np.mean(np.sum(d * d, axis=1))))
    return tuple(out)


def latent_variance(params, probes):
    """Mean per-dimension variance of all encoded probe observations."""
    Z = encode(params, np.concatenate([probes.o_src, probes.o_tgt]))
    return float(np.mean(np.var(Z, axis=0)))


def rollout_batch(params, starts, goals, emission, horizon):
    """Closed-loop rollouts for many goals at once; returns states ``(T+1, n, 2)`` and success."""
    s = np.array(starts, dtype=np.float64, ndmin=2)
    g = np.array(goals, dtype=np.float64, ndmin=2)
    states = [s]
    for _ in range(horizon):
        s = s + policy_forward(params, encode(params, emission(s, g)), s)
        states.append(s)
    states = np.stack(states)
    return states, np.linalg.norm(states[-1] - g, axis=1) < REACH_TOL


def rollout(params, goal, emission, horizon=40, start=(0.0, 0.0)):
    """Single closed-loop episode under ``emission``; returns ``(states, success)``."""
    states, ok = rollout_batch(params, [start], [goal], emission, horizon)
    return states[:, 0], bool(ok[0])


def evaluate(params, suite, step=0, bc_loss=0.0, uot_loss=0.0):
    a_id, a_ood = eval_alignment(params, suite.probes)
    em, b = suite.emissions["tgt"], suite.bench
    _, ok_id = rollout_batch(params, suite.id.start, suite.id.goal, em, b.horizon)
    _, ok_ood = rollout_batch(params, suite.ood.start, suite.ood.goal, em, b.horizon)
    pred = policy_forward(params, encode(params, suite.ood.o_tgt), suite.ood.state)
    err = pred - expert_action(suite.ood.state, suite.ood.goal, b.gain, b.a_max)
    return {"step": int(step), "bc_loss": float(bc_loss), "uot_loss": float(uot_loss),
            "align_err_id": a_id, "align_err_ood": a_ood,
            "action_mse_ood": float(np.mean(np.sum(err * err, axis=1))),
            "success_rate_id": float(np.mean(ok_id)), "success_rate_ood": float(np.mean(ok_ood))}


def _full_bc_loss(params, flat_src, flat_tgt, ratio):
    def mse(f):
        r = policy_forward(params, encode(params, f.obs), f.proprio) - f.actions
        return float(np.mean(np.sum(r * r, axis=1)))
    total = 0.0
    if ratio > 0:
        total += ratio * mse(flat_src)
    if ratio < 1:
        total += (1 - ratio) * mse(flat_tgt)
    return total


def learning_rate(cfg, step):
    """Step size for 1-based ``step``."""
    if cfg.lr_schedule == "cosine":
        return 0.5 * cfg.lr * (1.0 + np.cos(np.pi * (step - 1) / max(cfg.steps, 1)))
    return cfg.lr


def train(cfg, D_src, D_tgt, weights, suite, return_state=False):
    """Run the training loop for ``cfg.method``; returns ``(params, MetricsLog)``.

    Each step draws a BC batch with ``floor(ratio * bc_batch)`` source and the
    rest target transitions. With a positive effective lambda, ``ours`` adds
    the UOT loss on a sampler batch (plan frozen) and ``mmd`` the mean-embedding
    loss on independent uniform batches. BC and alignment batches use separate
    random streams, so a zero lambda reproduces co-training exactly.
    """
    if not D_src or not D_tgt:
        raise ValueError("datasets must be non-empty")
    lam, ratio = cfg.effective_lambda, cfg.effective_ratio
    d_o = D_src[0].obs.shape[1]
    dims = ModelDims(d_o=d_o, hidden=cfg.hidden, d_z=cfg.d_z,
                     d_x=D_src[0].proprio.shape[1], d_a=D_src[0].actions.shape[1])
    params = init_params(dims, _rng.stream(cfg.seed, _rng.INIT))
    state = AdamState.zeros_like(params)
    flat_src, flat_tgt = FlatData(D_src), FlatData(D_tgt)
    n_src = int(np.floor(ratio * cfg.bc_batch))
    n_tgt = cfg.bc_batch - n_src
    bc_rng = _rng.stream(cfg.seed, _rng.BC_BATCH)

    sampler = None
    if lam > 0:
        mode = cfg.sampler.mode if cfg.method == "ours" else "no_sampler"
        scfg = replace(cfg.sampler, mode=mode, batch_size=cfg.ot_batch, seed=cfg.seed)
        sampler = Sampler(D_src, D_tgt, weights, scfg, _rng.stream(cfg.seed, _rng.OT_BATCH))
    mu = Marginals.uniform(cfg.ot_batch, cfg.ot_batch)
    loss_cfg = LossConfig(lam=lam, alpha1=cfg.alpha1, alpha2=cfg.alpha2,
                          align="mmd" if cfg.method == "mmd" else "uot")

    metrics = MetricsLog(total_steps=cfg.steps)
    metrics.append(evaluate(params, suite, 0, _full_bc_loss(params, flat_src, flat_tgt, ratio), 0.0))
    uot_sum, uot_count = 0.0, 0
    for step in range(1, cfg.steps + 1):
        parts = []
        if n_src:
            parts.append(flat_src.take(bc_rng.integers(0, len(flat_src), n_src)))
        if n_tgt:
            parts.append(flat_tgt.take(bc_rng.integers(0, len(flat_tgt), n_tgt)))
        bc_batch = tuple(np.concatenate(cols) for cols in zip(*parts))

        ot_batch, plan = None, None
        if sampler is not None:
            ot_batch = sampler.sample()
            if loss_cfg.align == "uot":
                Zs, Zt = encode(params, ot_batch.src[0]), encode(params, ot_batch.tgt[0])
                C = joint_cost_matrix(Zs, ot_batch.src[1], Zt, ot_batch.tgt[1], cfg.alpha1, cfg.alpha2)
                plan = sinkhorn_unbalanced(C, mu, cfg.uot)
                if not plan.converged:
                    metrics.skipped_steps += 1
                    log.warning("step %d: UOT solve did not converge; alignment term skipped", step)
                    ot_batch, plan = None, None
        losses, grads = total_loss_and_grads(params, bc_batch, ot_batch, plan, loss_cfg)
        if plan is not None:
            uot_sum += losses.uot
            uot_count += 1
        elif loss_cfg.align == "mmd" and ot_batch is not None:
            uot_sum += losses.mmd
            uot_count += 1
        params, state = adam_step(params, grads, state, lr=learning_rate(cfg, step))
        if step % cfg.eval_every == 0 or step == cfg.steps:
            mean_uot = uot_sum / uot_count if uot_count else 0.0
            metrics.append(evaluate(params, suite, step,
                                    _full_bc_loss(params, flat_src, flat_tgt, ratio), mean_uot))
            uot_sum, uot_count = 0.0, 0
    if metrics.failed:
        log.error("run flagged failed: %d of %d UOT solves skipped", metrics.skipped_steps, cfg.steps)
    return (params, metrics, state) if return_state else (params, metrics)


def check_no_collapse(params, probes, threshold=COLLAPSE_VAR):
    return latent_variance(params, probes) > threshold


SWEEP_KEYS = ("epsilon", "tau", "winsize", "n_src")
SUMMARY_FIELDS = ("epsilon", "tau", "winsize", "n_src", "seed", "status", "skipped_steps") + METRIC_FIELDS


def _apply_point(cfg, bench, point, seed):
    uot, samp = cfg.uot, cfg.sampler
    if "epsilon" in point:
        uot = replace(uot, epsilon=float(point["epsilon"]))
    if "tau" in point:
        uot = replace(uot, tau=float(point["tau"]))
    if "winsize" in point:
        samp = replace(samp, winsize=point["winsize"])
    if "n_src" in point:
        bench = replace(bench, n_src=int(point["n_src"]))
    return replace(cfg, uot=uot, sampler=samp, seed=seed), replace(bench, seed=seed)


def sweep(grid, cfg, bench, seeds=(0,)):
    """Train once per (grid point, seed) over the Cartesian product of ``grid``.

    A run that raises is recorded with ``status=error`` and the sweep moves on.
    Returns ``(rows, logs)`` where ``logs`` maps ``(point tuple, seed)`` to the
    run's :class:`MetricsLog`.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("sweep grid must be non-empty")
    unknown = set(grid) - set(SWEEP_KEYS)
    if unknown:
        raise ValueError(f"unknown sweep keys: {sorted(unknown)}")
    keys = sorted(grid)
    data_cache = {}
    rows, logs = [], {}
    for values in itertools.product(*(grid[k] for k in keys)):
        point = dict(zip(keys, values))
        for seed in seeds:
            row = {"epsilon": cfg.uot.epsilon, "tau": cfg.uot.tau, "winsize": cfg.sampler.winsize,
                   "n_src": bench.n_src, **point, "seed": seed}
            try:
                run_cfg, run_bench = _apply_point(cfg, bench, point, seed)
                if run_bench not in data_cache:
                    D_src, D_tgt, probes = generate(run_bench)
                    data_cache[run_bench] = (D_src, D_tgt, probes, build_pair_weights(D_src, D_tgt))
                D_src, D_tgt, probes, weights = data_cache[run_bench]
                _, mlog = train(run_cfg, D_src, D_tgt, weights, EvalSuite(probes, run_bench))
                row.update(mlog.final, status="failed" if mlog.failed else "ok",
                           skipped_steps=mlog.skipped_steps)
                logs[(tuple(values), seed)] = mlog
            except (ValueError, ArithmeticError, RuntimeError) as exc:
                log.error("sweep point %s seed %d failed: %s", point, seed, exc)
                row.update({k: float("nan") for k in METRIC_FIELDS}, status="error", skipped_steps=-1)
            rows.append(row)
    return rows, logs


def summary_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for r in rows:
        w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in SUMMARY_FIELDS])
    return buf.getvalue()


def embeddings_csv(params, probes):
    """One latent per row tagged with domain and region, for external plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain", "region"] + [f"z{i}" for i in range(params.dims.d_z)])
    for dom, O in (("src", probes.o_src), ("tgt", probes.o_tgt)):
        for region, z in zip(probes.region, encode(params, O)):
            w.writerow([dom, region] + [repr(float(v)) for v in z])
    return buf.getvalue()
