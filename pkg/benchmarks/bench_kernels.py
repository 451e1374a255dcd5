"""Time the numba and pure-numpy kernel paths on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both paths are imported directly, so the SPARSEPDE_DISABLE_NUMBA flag does not
matter here. The first numba call (compilation) is excluded.
"""
import argparse
import timeit

import numpy as np

from sparsepde import kernels
from sparsepde.dictionary import DictionarySpec
from sparsepde.gates import GateParams, sample_uniform


def cases(batch=256, n=11, degree=3, actions=8, seed=0):
    rng = np.random.default_rng(seed)
    parent, var = DictionarySpec(n, degree)._parent_table
    S = rng.normal(size=(batch, n))
    theta = kernels.poly_features_np(S, parent, var)
    F = theta.shape[1]
    Xi = rng.normal(size=(F, actions))
    la = GateParams.init((F, actions), rng).log_alpha
    u = sample_uniform(rng, (batch, F, actions))
    z, dz = kernels.hard_concrete_np(la, u, 2 / 3, -0.1, 1.1)
    gpre = rng.normal(size=(batch, actions))
    return {
        "poly_features": lambda k: k["poly_features"](S, parent, var),
        "hard_concrete": lambda k: k["hard_concrete"](la, u, 2 / 3, -0.1, 1.1),
        "gated_forward": lambda k: k["gated_forward"](theta, Xi, z),
        "gated_backward": lambda k: k["gated_backward"](theta, Xi, z, dz, gpre),
    }, F


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--batch", type=int, default=256)
    args = p.parse_args(argv)
    paths = {
        suffix: {name: getattr(kernels, f"{name}_{suffix}")
                 for name in ("poly_features", "hard_concrete", "gated_forward", "gated_backward")}
        for suffix in ("np", "nb")
    }
    calls, F = cases(batch=args.batch)
    print(f"batch {args.batch}, {F} features, 8 actions, best of {args.repeat}")
    print(f"{'kernel':<16}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call in calls.items():
        call(paths["nb"])  # compile
        t = {s: min(timeit.repeat(lambda: call(paths[s]), number=1, repeat=args.repeat)) * 1e3
             for s in ("np", "nb")}
        print(f"{name:<16}{t['np']:>10.3f}{t['nb']:>10.3f}{t['np'] / t['nb']:>8.1f}x")


if __name__ == "__main__":
    main()
