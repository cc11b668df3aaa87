"""Compare the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_backends.py [--n 100,500,2000] [--repeats 5]

Prints one row per (component, n) with the mean seconds of each backend,
the speed-up, and the largest absolute difference between their outputs.
"""

import argparse
import time

import numpy as np

from ordseg import _accel
from ordseg.cem import cem_fit, CemConfig
from ordseg.em import EmConfig, em_fit, posteriors_and_loglik
from ordseg.fisher import ConstantMean, Polynomial, compute_cost_matrix, dp_tables
from ordseg.logistic import irls_fit
from ordseg.simulate import SimulationSpec, simulate


def timed(fn, repeats):
    out = fn()  # warm-up (and JIT compile)
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.mean(ts)), out


def cases(n):
    s1 = simulate(SimulationSpec(1, n, seed=1)).series
    s2 = simulate(SimulationSpec(2, n, seed=1)).series
    C = compute_cost_matrix(s1, ConstantMean(), "numba")
    rng = np.random.default_rng(0)
    W = rng.dirichlet(np.ones(3), size=n)
    fit = em_fit(s1, 3, 0, EmConfig(n_restarts=1))
    return {
        "cost p=0": lambda: compute_cost_matrix(s1, ConstantMean(), _accel.BACKEND),
        "cost p=1": lambda: compute_cost_matrix(s2, Polynomial(1), _accel.BACKEND),
        "dp K=3": lambda: dp_tables(C, 3, _accel.BACKEND)[0][-1, -1],
        "irls": lambda: irls_fit(s1.t, W).params.coef,
        "e-step": lambda: posteriors_and_loglik(s1, fit.params)[0],
        "em fit": lambda: em_fit(s1, 3, 0, EmConfig(n_restarts=1)).final_value,
        "cem fit": lambda: cem_fit(s1, 3, 0, CemConfig(n_restarts=1)).final_value,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", default="100,500,2000")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    print(f"{'component':<10} {'n':>6} {'numba s':>11} {'numpy s':>11} {'speed-up':>9} {'max |diff|':>11}")
    for n in (int(x) for x in args.n.split(",")):
        for name, fn in cases(n).items():
            with _accel.use_backend("numba"):
                t_nb, out_nb = timed(fn, args.repeats)
            with _accel.use_backend("numpy"):
                t_np, out_np = timed(fn, args.repeats)
            diff = float(np.max(np.abs(np.asarray(out_nb) - np.asarray(out_np))))
            print(f"{name:<10} {n:>6} {t_nb:>11.5f} {t_np:>11.5f} {t_np / t_nb:>8.1f}x {diff:>11.3g}")


if __name__ == "__main__":
    main()
