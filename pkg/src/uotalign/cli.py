"""Command-line entry point: ``uotalign <command> ...``.

Exit codes: 0 success, 2 input or config error, 3 numerical non-convergence,
1 anything else.
"""
import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .dtw_align import build_pair_weights
from .geometry import read_matrix_csv, write_matrix_csv
from .model import ModelDims, init_params, load_checkpoint, save_checkpoint
from . import _rng
from .ot_solvers import Marginals, UotConfig, sinkhorn_balanced, sinkhorn_unbalanced
from .sampler import Sampler, SamplerConfig
from .synthdata import BenchConfig, ProbeSet, generate, read_jsonl, write_jsonl
from .trainer_eval import (SWEEP_KEYS, EvalSuite, MetricsLog, TrainConfig, embeddings_csv,
                           evaluate, summary_csv, sweep, train)

EXIT_OK, EXIT_OTHER, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("uotalign")


class InputError(ValueError):
    """Bad user input: unknown config key, unparseable file, missing seed."""


class NumericalFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- run config

# key -> (section, field name); sections are the config dataclasses
_KEYS = {
    "seed": ("run", "seed"),
    "method": ("train", "method"), "lambda": ("train", "lam"), "bc_batch": ("train", "bc_batch"),
    "ot_batch": ("train", "ot_batch"), "cotrain_ratio": ("train", "cotrain_ratio"),
    "steps": ("train", "steps"), "eval_every": ("train", "eval_every"), "lr": ("train", "lr"),
    "lr_schedule": ("train", "lr_schedule"), "alpha1": ("train", "alpha1"),
    "alpha2": ("train", "alpha2"), "hidden": ("train", "hidden"), "d_z": ("train", "d_z"),
    "epsilon": ("uot", "epsilon"), "tau": ("uot", "tau"), "max_iter": ("uot", "max_iter"),
    "tol": ("uot", "tol"),
    "sampler_mode": ("sampler", "mode"), "winsize": ("sampler", "winsize"),
    "n_src": ("bench", "n_src"), "n_tgt": ("bench", "n_tgt"), "horizon": ("bench", "horizon"),
    "noise_std": ("bench", "noise_std"), "d_o": ("bench", "d_o"), "gain": ("bench", "gain"),
    "a_max": ("bench", "a_max"), "start_radius": ("bench", "start_radius"),
    "n_probes": ("bench", "n_probes"), "bias_scale": ("bench", "bias_scale"),
}


def _default_of(section, name):
    cls = {"train": TrainConfig, "uot": UotConfig, "sampler": SamplerConfig, "bench": BenchConfig}[section]
    return next(f for f in fields(cls) if f.name == name).default


def _parse_value(key, text):
    section, name = _KEYS[key]
    if key == "seed":
        default = 0
    else:
        default = _default_of(section, name)
    try:
        if key == "winsize":
            return "off" if text == "off" else int(text)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise InputError(f"config key {key!r}: cannot parse value {text!r}") from None


def _format_value(v):
    return repr(v) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class RunConfig:
    """Flat ``key=value`` view over the train, solver, sampler and benchmark configs.

    Only keys that were set are stored; everything else falls back to the
    dataclass defaults when the typed configs are built.
    """

    values: tuple = ()

    @property
    def mapping(self):
        return dict(self.values)

    @classmethod
    def parse(cls, text):
        out = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _KEYS:
                raise InputError(f"unknown config key {key!r}")
            out[key] = _parse_value(key, val)
        return cls(tuple(sorted(out.items())))

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            with open(path) as fh:
                return cls.parse(fh.read())
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None

    def emit(self):
        return "".join(f"{k}={_format_value(v)}\n" for k, v in self.values)

    def with_values(self, **kw):
        m = self.mapping
        m.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig(tuple(sorted(m.items())))

    def _section(self, section):
        return {name: v for k, v in self.values for sec, name in [_KEYS[k]] if sec == section}

    @property
    def seed(self):
        return self.mapping.get("seed")

    def bench(self):
        try:
            return BenchConfig(**self._section("bench"), seed=self.seed or 0)
        except ValueError as exc:
            raise InputError(str(exc)) from None

    def train(self):
        try:
            tr = self._section("train")
            uot = UotConfig(**self._section("uot"))
            samp = SamplerConfig(**self._section("sampler"), batch_size=tr.get("ot_batch", 128),
                                 seed=self.seed or 0)
            return TrainConfig(**tr, uot=uot, sampler=samp, seed=self.seed or 0)
        except ValueError as exc:
            raise InputError(str(exc)) from None

    def hash(self):
        return hashlib.sha256(self.emit().encode()).hexdigest()


def _require_seed(rc, seed_arg):
    rc = rc.with_values(seed=seed_arg)
    if rc.seed is None:
        raise InputError("a seed is required: set seed=... in the config or pass --seed")
    return rc


# ---------------------------------------------------------------- file helpers

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _tree_hashes(root):
    out = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            rel = os.path.relpath(os.path.join(dirpath, name), root).replace(os.sep, "/")
            if rel != "manifest.json":
                out[rel] = _sha256(os.path.join(dirpath, name))
    return out


def _manifest(out_dir, rc, inputs):
    rec = {
        "tool_version": __version__,
        "config_hash": rc.hash(),
        "seed": rc.seed,
        "input_hashes": {name: _sha256(p) for name, p in sorted(inputs.items())},
        "output_hashes": _tree_hashes(out_dir),
    }
    _write_text(os.path.join(out_dir, "manifest.json"), json.dumps(rec, indent=2, sort_keys=True) + "\n")


class _AtomicDir:
    """Write into a temporary sibling directory and move it into place on success."""

    def __init__(self, target):
        self.target = os.path.abspath(target)

    def __enter__(self):
        parent = os.path.dirname(self.target)
        os.makedirs(parent, exist_ok=True)
        self.tmp = tempfile.mkdtemp(prefix=".tmp-", dir=parent)
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        os.makedirs(self.target, exist_ok=True)
        for name in os.listdir(self.tmp):
            os.replace(os.path.join(self.tmp, name), os.path.join(self.target, name))
        os.rmdir(self.tmp)
        return False


def _load_data(data_dir):
    try:
        D_src = read_jsonl(os.path.join(data_dir, "d_src.jsonl"))
        D_tgt = read_jsonl(os.path.join(data_dir, "d_tgt.jsonl"))
        with open(os.path.join(data_dir, "probes.jsonl")) as fh:
            probes = ProbeSet.from_jsonl(fh.read())
        bench_rc = RunConfig.load(os.path.join(data_dir, "config.txt"))
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot load dataset from {data_dir}: {exc}") from None
    if not D_src or not D_tgt:
        raise InputError(f"dataset in {data_dir} is empty")
    return D_src, D_tgt, probes, bench_rc.bench()


def _data_inputs(data_dir):
    return {n: os.path.join(data_dir, n) for n in ("d_src.jsonl", "d_tgt.jsonl", "probes.jsonl", "config.txt")}


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    rc = _require_seed(RunConfig.load(args.config), args.seed)
    bench = rc.bench()
    D_src, D_tgt, probes = generate(bench)
    with _AtomicDir(args.out) as tmp:
        write_jsonl(os.path.join(tmp, "d_src.jsonl"), D_src)
        write_jsonl(os.path.join(tmp, "d_tgt.jsonl"), D_tgt)
        _write_text(os.path.join(tmp, "probes.jsonl"), probes.to_jsonl())
        _write_text(os.path.join(tmp, "config.txt"), rc.emit())
        _manifest(tmp, rc, {})
    print(f"wrote {len(D_src)} source and {len(D_tgt)} target trajectories to {args.out}")


def _read_marginals(path, n, m):
    if path is None:
        return Marginals.uniform(n, m)
    try:
        with open(path) as fh:
            rows = [line for line in fh.read().splitlines() if line.strip()]
        if len(rows) != 2:
            raise ValueError("expected two rows: p then q")
        p, q = (np.array([float(x) for x in r.split(",")]) for r in rows)
        if len(p) != n or len(q) != m:
            raise ValueError(f"marginal lengths {len(p)}, {len(q)} do not match cost shape {(n, m)}")
        return Marginals(p, q)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read marginals {path}: {exc}") from None


def cmd_solve(args):
    try:
        C = read_matrix_csv(args.cost)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read cost matrix {args.cost}: {exc}") from None
    mu = _read_marginals(args.marginals, *C.shape)
    try:
        if args.mode == "balanced":
            plan = sinkhorn_balanced(C, mu, args.epsilon, max_iter=args.max_iter, tol=args.tol)
        else:
            plan = sinkhorn_unbalanced(C, mu, UotConfig(args.epsilon, args.tau, args.max_iter, args.tol))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    with _AtomicDir(args.out) as tmp:
        write_matrix_csv(os.path.join(tmp, "plan.csv"), plan.plan)
        _write_text(os.path.join(tmp, "summary.json"), json.dumps(plan.summary(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(plan.summary(), sort_keys=True))
    if not plan.converged:
        raise NumericalFailure(f"solver did not converge in {plan.iterations} iterations "
                               f"(row residual {plan.row_residual:.3g}, col residual {plan.col_residual:.3g})")


def cmd_dtw(args):
    D_src, D_tgt, _, _ = _load_data(args.data)
    weights = build_pair_weights(D_src, D_tgt)
    with _AtomicDir(args.out) as tmp:
        write_matrix_csv(os.path.join(tmp, "weights.csv"), weights.weights)
        write_matrix_csv(os.path.join(tmp, "norm_dists.csv"), weights.norm_dists)
        _write_text(os.path.join(tmp, "paths.jsonl"), weights.paths_jsonl())
        _manifest(tmp, RunConfig(), _data_inputs(args.data))
    print(f"{weights.shape[0]}x{weights.shape[1]} pair weights written to {args.out}")


def cmd_sample_debug(args):
    rc = RunConfig.load(args.config).with_values(seed=args.seed)
    cfg = rc.train()
    D_src, D_tgt, _, _ = _load_data(args.data)
    weights = build_pair_weights(D_src, D_tgt) if cfg.sampler.mode == "ours" else None
    sampler = Sampler(D_src, D_tgt, weights, cfg.sampler, _rng.stream(cfg.seed, _rng.OT_BATCH))
    lines = ["batch,src_traj,src_t,tgt_traj,tgt_t,proprio_dist"]
    means = []
    for b in range(args.batches):
        prov = sampler.provenance()
        batch = sampler.batch_from(prov)
        dist = np.linalg.norm(batch.src[1] - batch.tgt[1], axis=1)
        means.append(float(dist.mean()))
        lines += [f"{b},{k},{t},{l},{u},{d!r}" for (k, t, l, u), d in zip(prov.tolist(), dist.tolist())]
    summary = {"mode": cfg.sampler.mode, "winsize": cfg.sampler.winsize, "batch_size": cfg.sampler.batch_size,
               "batches": args.batches, "mean_proprio_dist": float(np.mean(means)) if means else None,
               "batch_mean_proprio_dist": means}
    with _AtomicDir(args.out) as tmp:
        _write_text(os.path.join(tmp, "batches.csv"), "\n".join(lines) + "\n")
        _write_text(os.path.join(tmp, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
        _manifest(tmp, rc, _data_inputs(args.data))
    print(f"{args.batches} batches written to {args.out}")


def cmd_train(args):
    rc = _require_seed(RunConfig.load(args.config), args.seed)
    cfg = rc.train()
    D_src, D_tgt, probes, bench = _load_data(args.data)
    weights = build_pair_weights(D_src, D_tgt) if cfg.effective_lambda > 0 and cfg.method == "ours" else None
    params, metrics, state = train(cfg, D_src, D_tgt, weights, EvalSuite(probes, bench), return_state=True)
    with _AtomicDir(args.out) as tmp:
        _write_text(os.path.join(tmp, "metrics.csv"), metrics.to_csv())
        save_checkpoint(os.path.join(tmp, "checkpoint.json"), params, state,
                        {"step": cfg.steps, "method": cfg.method, "seed": cfg.seed,
                         "skipped_steps": metrics.skipped_steps})
        _write_text(os.path.join(tmp, "embeddings.csv"), embeddings_csv(params, probes))
        _write_text(os.path.join(tmp, "config.txt"), rc.emit())
        _manifest(tmp, rc, _data_inputs(args.data))
    f = metrics.final
    print(f"{cfg.method}: align_err_ood={f['align_err_ood']:.4g} success_rate_ood={f['success_rate_ood']:.3f}")
    if metrics.failed:
        raise NumericalFailure(f"{metrics.skipped_steps} of {cfg.steps} UOT solves did not converge")


def _load_params(path):
    try:
        return load_checkpoint(path)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot load checkpoint {path}: {exc}") from None


def cmd_eval(args):
    D_src, D_tgt, probes, bench = _load_data(args.data)
    if args.checkpoint:
        params, _, meta = _load_params(args.checkpoint)
        inputs = {**_data_inputs(args.data), "checkpoint.json": args.checkpoint}
    else:
        # untrained model from the config's seed: the pre-training baseline
        rc = _require_seed(RunConfig.load(args.config), args.seed)
        cfg = rc.train()
        dims = ModelDims(d_o=D_src[0].obs.shape[1], hidden=cfg.hidden, d_z=cfg.d_z)
        params, meta = init_params(dims, _rng.stream(cfg.seed, _rng.INIT)), {"step": 0}
        inputs = _data_inputs(args.data)
    metrics = MetricsLog()
    metrics.append(evaluate(params, EvalSuite(probes, bench), meta.get("step", 0)))
    with _AtomicDir(args.out) as tmp:
        _write_text(os.path.join(tmp, "metrics.csv"), metrics.to_csv())
        _manifest(tmp, RunConfig(), inputs)
    print(metrics.to_csv(), end="")


def _parse_grid(text):
    grid = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if "=" not in part:
            raise InputError(f"grid entry {part!r}: expected key=v1,v2,...")
        key, vals = (s.strip() for s in part.split("=", 1))
        if key not in SWEEP_KEYS:
            raise InputError(f"unknown sweep key {key!r}; expected one of {SWEEP_KEYS}")
        grid[key] = [_parse_value(key, v.strip()) for v in vals.split(",") if v.strip()]
        if not grid[key]:
            raise InputError(f"grid entry {key!r} has no values")
    if not grid:
        raise InputError("empty sweep grid")
    return grid


def cmd_sweep(args):
    rc = _require_seed(RunConfig.load(args.config), args.seed)
    grid = _parse_grid(args.grid)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [rc.seed]
    rows, logs = sweep(grid, rc.train(), rc.bench(), seeds)
    keys = sorted(grid)
    with _AtomicDir(args.out) as tmp:
        _write_text(os.path.join(tmp, "summary.csv"), summary_csv(rows))
        os.makedirs(os.path.join(tmp, "runs"))
        for (values, seed), mlog in sorted(logs.items(), key=lambda kv: (repr(kv[0][0]), kv[0][1])):
            tag = "_".join(f"{k}-{v}" for k, v in zip(keys, values)) + f"_seed-{seed}"
            _write_text(os.path.join(tmp, "runs", f"{tag}.csv"), mlog.to_csv())
        _write_text(os.path.join(tmp, "config.txt"), rc.emit())
        _manifest(tmp, rc, {})
    print(summary_csv(rows), end="")
    if any(r["status"] != "ok" for r in rows):
        raise NumericalFailure("some sweep runs failed; see summary.csv")


def cmd_export_embeddings(args):
    _, _, probes, _ = _load_data(args.data)
    params, _, _ = _load_params(args.checkpoint)
    text = embeddings_csv(params, probes)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    _write_text(args.out, text)
    print(f"{2 * len(probes)} embeddings written to {args.out}")


# ---------------------------------------------------------------- argument parsing

def build_parser():
    ap = argparse.ArgumentParser(prog="uotalign", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        return p

    p = add("gen-data", cmd_gen_data, "generate the two-domain benchmark")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("solve", cmd_solve, "solve an OT problem from CSV inputs")
    p.add_argument("cost")
    p.add_argument("--marginals", help="CSV with two rows: p, then q (default uniform)")
    p.add_argument("--mode", choices=("balanced", "unbalanced"), default="unbalanced")
    p.add_argument("--epsilon", type=float, default=UotConfig.epsilon)
    p.add_argument("--tau", type=float, default=UotConfig.tau)
    p.add_argument("--max-iter", type=int, default=UotConfig.max_iter)
    p.add_argument("--tol", type=float, default=UotConfig.tol)
    p.add_argument("--out", required=True)

    p = add("dtw", cmd_dtw, "DTW pair weights and paths for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("sample-debug", cmd_sample_debug, "dump paired-batch provenance")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--batches", type=int, default=10)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train one method")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "evaluate a checkpoint (or the untrained model)")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("sweep", cmd_sweep, "train over a hyperparameter grid")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", required=True, help="e.g. 'epsilon=0.0005,0.001;n_src=50,100'")
    p.add_argument("--seeds", help="comma-separated replicate seeds (default: the config seed)")
    p.add_argument("--out", required=True)

    p = add("export-embeddings", cmd_export_embeddings, "latent codes of the probe set as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001 - last-resort exit code for scripts
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
