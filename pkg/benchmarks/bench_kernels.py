"""Time the numba and numpy kernel backends on the default 201 x 201 grid.

    python3 benchmarks/bench_kernels.py [--repeat 200]

Both backends are always importable, so the comparison runs in one process
regardless of SELECTLAB_NUMBA. The last block times a short full replication
under each backend.
"""

import argparse
import math
import timeit

import numpy as np

from selectlab import kernels
from selectlab.harness import ExperimentConfig, run_replication
from selectlab.model import Dgp, IndexMap, LinkFunction
from selectlab.posterior import FLUSH, normal_prior_on_grid
from selectlab.strategies import StrategySpec


def _inputs():
    grid = normal_prior_on_grid((2.0, 1.0), (0.75, 0.75))
    fa, fb = kernels.separable_factors([(0.4, grid.axes[0]), (0.7, grid.axes[1])])
    ta, qa, tb, qb = grid._split()
    rng = np.random.default_rng(0)
    m = 20
    za = rng.random((m, 1)) * grid.axes[0][None, :]
    zb = rng.random((m, 1)) * grid.axes[1][None, :]
    lim = kernels.FACTOR_EXP_LIMIT
    ll = (za, zb, np.exp(np.clip(za, -lim, lim)), np.exp(np.clip(zb, -lim, lim)), rng.random(m), rng.random(m))
    return grid._flat().copy(), fa, fb, qa, qb, ta, tb, ll


def _time(fn, repeat):
    fn()  # compile / warm up
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--steps", type=int, default=200, help="steps in the replication timing")
    args = parser.parse_args()

    density, fa, fb, qa, qb, ta, tb, ll = _inputs()
    backends = [b for b in (kernels.NUMBA, kernels.NUMPY) if b is not None]
    print(f"{'kernel':<22}" + "".join(f"{b.name + ' ms':>12}" for b in backends))
    rows = {
        "logistic_reweight": lambda b: (lambda: b.logistic_reweight(density.copy(), fa, fb, 1, 1e-12)),
        "normalize_moments": lambda b: (lambda: b.normalize_moments(density.copy(), qa, qb, ta, tb, FLUSH)),
        "loglik_accumulate": lambda b: (
            lambda: b.loglik_accumulate(np.zeros(density.shape), *ll, math.log(1e-12))
        ),
    }
    for name, make in rows.items():
        print(f"{name:<22}" + "".join(f"{_time(make(b), args.repeat):>12.3f}" for b in backends))

    cfg = ExperimentConfig(
        dgp=Dgp(LinkFunction(), IndexMap("linear", 2), (1.0, 1.0), (0.0, 0.0), (1.0, 1.0)),
        prior_mean=(2.0, 1.0), prior_cov=(0.75, 0.75), strategy=StrategySpec("randomized_most_likely"),
        n_steps=args.steps, replications=1, master_seed=1,
    )
    times = []
    for b in backends:
        kernels.BACKEND = b
        times.append(_time(lambda: run_replication(cfg, 0), 3))
    print(f"{f'replication ({args.steps} steps)':<22}" + "".join(f"{t:>12.1f}" for t in times))


if __name__ == "__main__":
    main()
