"""Compare the numba and numpy kernel backends.

Kernel timings are per call after a warm-up call (so numba compilation is
excluded).  End-to-end solve timings run in a fresh interpreter per backend
and therefore include import and JIT cache loading.

    python3 benchmarks/bench_backends.py [--repeat 5] [--k 32 64] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from sdd_galerkin import kernels
from sdd_galerkin.basis import DomainSpec, build_basis

SOLVE_SNIPPET = """
import time
t0 = time.perf_counter()
import numpy as np
from sdd_galerkin.basis import DomainSpec
from sdd_galerkin.model import DelaySpec, NonlinearitySpec, ProblemSpec, mode_history
from sdd_galerkin.solver import SolverConfig, solve
dom = DomainSpec(d=1, L=np.pi)
nl = NonlinearitySpec(f=[0, 0, 0, -1.0], g=[[0.0, 0.1]], p=3, beta=1, b0=0.1, beta0=3)
spec = ProblemSpec(dom, nl, DelaySpec("state-norm", r=0.5, tau0=0.1),
                   mode_history(dom, {{1: 2.0}}), q=8.0)
t1 = time.perf_counter()
solve(spec, SolverConfig(k={k}, dt=1e-3, T={T}))
t2 = time.perf_counter()
print(t1 - t0, t2 - t1)
"""


def per_call(fn, repeat, number):
    fn()
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases(k):
    rng = np.random.default_rng(0)
    b = build_basis(DomainSpec(d=1, L=np.pi), k)
    synth, proj = np.ascontiguousarray(b.synth), np.ascontiguousarray(b.proj)
    a, ad = rng.normal(size=k), rng.normal(size=k)
    f = np.array([0.0, 0.0, 0.0, -1.0])
    g = np.array([[0.0, 0.1]])
    n = 255
    sub = np.full(n - 1, -1.0)
    diag = np.full(n, 3.0)
    rhs = rng.normal(size=n)
    times = np.linspace(-0.5, 0.0, 501)
    states = rng.normal(size=(501, k))
    u = a @ synth
    w = b.quad_weights
    vals = np.ascontiguousarray(rng.normal(size=(64, w.shape[0])))
    return {
        "modal_nonlinear": lambda impl: impl.modal_nonlinear(a, ad, synth, proj, f, g),
        "poly1": lambda impl: impl.poly1(f, u),
        "interp_row": lambda impl: impl.interp_row(times, states, -0.2345),
        "lq_norms(64 rows)": lambda impl: impl.lq_norms(vals, w, 8.0),
        "tridiag_solve(255)": lambda impl: impl.tridiag_solve(sub, diag, sub, rhs),
    }


def run_solve(backend, k, T):
    env = dict(os.environ, **{kernels.BACKEND_ENV: backend})
    out = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET.format(k=k, T=T)], env=env,
                         capture_output=True, text=True, check=True)
    setup, solve_time = (float(x) for x in out.stdout.split())
    return setup, solve_time


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--k", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--T", type=float, default=2.0, help="horizon of the end-to-end solve")
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)

    impls = [kernels.numpy_impl, kernels.numba_impl]
    results = {"kernels": [], "solve": []}
    print(f"{'kernel':<22}{'k':>4}{'numpy [us]':>14}{'numba [us]':>14}{'speedup':>10}")
    for k in args.k:
        for name, fn in kernel_cases(k).items():
            t = [per_call(lambda impl=impl: fn(impl), args.repeat, 200) * 1e6 for impl in impls]
            results["kernels"].append({"kernel": name, "k": k, "numpy_us": t[0], "numba_us": t[1]})
            print(f"{name:<22}{k:>4}{t[0]:>14.2f}{t[1]:>14.2f}{t[0] / t[1]:>10.2f}")

    print(f"\n{'solve (fresh process)':<22}{'k':>4}{'backend':>10}{'import [s]':>12}{'solve [s]':>12}")
    for k in args.k:
        for backend in ("numpy", "numba"):
            setup, solve_time = run_solve(backend, k, args.T)
            results["solve"].append({"k": k, "backend": backend, "import_s": setup,
                                     "solve_s": solve_time, "T": args.T})
            print(f"{'':<22}{k:>4}{backend:>10}{setup:>12.3f}{solve_time:>12.3f}")

    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
