"""Time the compiled kernels against the numpy fallback on the training workloads.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Cases mirror what one training run does: a 128x128 log-domain UOT solve at
eps=5e-4, tau=0.01 (once per step), a linear-domain balanced solve, and the
40x40 DTW accumulations behind the pair-weight table.
"""
import argparse
import timeit

import numpy as np

from uotalign import _pykernels
from uotalign.geometry import pairwise_sq_euclid

try:
    from uotalign import _core
except ImportError:  # extension not built
    _core = None


def cases(rng):
    Z = rng.normal(size=(128, 8))
    X = rng.uniform(-1, 1, size=(128, 2))
    Zt = Z + 0.1 * rng.normal(size=Z.shape)
    Xt = X + 0.05 * rng.normal(size=X.shape)
    C = 0.1 * pairwise_sq_euclid(Z, Zt) + 10.0 * pairwise_sq_euclid(X, Xt)
    logp = np.full(128, -np.log(128.0))
    eps, tau = 5e-4, 0.01
    Cb = rng.random((128, 128))
    K = np.exp(-Cb / 0.1)
    p = np.full(128, 1.0 / 128)
    seqs = [np.cumsum(rng.normal(scale=0.05, size=(40, 2)), axis=0) for _ in range(20)]

    def uot(mod):
        return mod.sinkhorn_potentials(C, logp, logp, eps, tau / (tau + eps), 10_000, 1e-9, False)

    def balanced(mod):
        return mod.sinkhorn_scaling(K, p, p, 1.0, 10_000, 1e-9, True)

    def dtw(mod):
        for a in seqs[:10]:
            for b in seqs[10:]:
                mod.dtw_accumulate(a, b)

    return {"uot_log_128": uot, "balanced_linear_128": balanced, "dtw_100_pairs_40x40": dtw}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": _pykernels}
    if _core is not None:
        backends["cython"] = _core
    else:
        print("compiled extension not available; timing the fallback only")
    print(f"{'case':24s}" + "".join(f"{b:>14s}" for b in backends) + ("    speedup" if len(backends) == 2 else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for b, mod in backends.items():
            fn(mod)  # warm-up
            times[b] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        row = f"{name:24s}" + "".join(f"{times[b] * 1e3:11.2f} ms" for b in backends)
        if len(backends) == 2:
            row += f"  {times['python'] / times['cython']:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
