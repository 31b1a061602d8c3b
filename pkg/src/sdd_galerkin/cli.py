"""Command-line experiment runner.

    sdd-galerkin run CONFIG [--out DIR] [--jobs N] [--dump-modes]

Each run writes trajectory CSVs, ``report.jsonl`` (one check record per
line) and ``manifest.json``.  Everything except the manifest's wall time is
a deterministic function of the config.

Exit codes: 0 all checks pass, 1 a check failed, 2 precondition or schema
error, 3 blowup suspected, 4 I/O error.
"""

import argparse
import hashlib
import itertools
import json
import logging
import os
import platform
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .basis import build_basis
from .config import build_experiment, config_digest, load_config, set_path
from .errors import BlowupSuspected, ConfigError, PreconditionError, SddError, SpecViolation
from .estimates import (
    CheckRecord,
    REFS,
    absorbing_check,
    calibrate_rho_star,
    digest,
    run_family,
    verify_decay,
    verify_linf_bound,
    verify_smoothing,
    verify_v2_budget,
)
from .fdm import compare, fdm_solve
from .model import (
    CRITICAL_EXPONENT_REF,
    check_dissipation,
    check_growth,
    critical_exponents,
    estimate_tau_lipschitz,
    require_admissible,
)
from .solver import SolverConfig, approximate_initial, convergence_study, solve

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_PRECONDITION = 2
EXIT_BLOWUP = 3
EXIT_IO = 4

RUN_REFS = {
    "simulate": "a_j <- exp(-mu_j dt) a_j + (1 - exp(-mu_j dt))/mu_j F_j(t, u_k, u_k(t - tau))",
    "growth": "|f(u)| <= a0(|u|^p + 1), |g(u,v)| <= b0(|u|^beta + |v|^beta + 1)",
    "dissipation": "f(s)s <= -Lambda |s|^(beta0+1) + N",
    "delay-lipschitz": "tau(t, .) with values in [0, r], locally Lipschitz on C(-r,0;L2)",
    "converge": "max_t |u_k' - u_k|_2 nonincreasing along the Galerkin sequence",
    "compare-oracle": "|u_spectral - u_grid|_2 / |u_grid|_2 at selected times",
    "sweep-run": "cartesian parameter sweep member",
    "critical-exponent": CRITICAL_EXPONENT_REF,
}
ESTIMATE_CHECKS = ("decay-Lq", "decay-V1", "v2-budget", "linf-bound", "smoothing", "absorbing")
FAMILY_CHECKS = {"v2-budget", "linf-bound", "absorbing"}
DEFAULT_AMPLITUDES = (0.5, 2.0, 8.0)

log = logging.getLogger(__name__)


@dataclass
class RunOutcome:
    exit_code: int
    records: list = field(default_factory=list)
    files: list = field(default_factory=list)
    messages: list = field(default_factory=list)


def _record(check_id, verdict, fitted, inputs, margins=None, notes=None):
    return CheckRecord(check_id=check_id, reference=RUN_REFS[check_id], verdict=verdict,
                       fitted=fitted, margins=margins or {}, inputs_digest=inputs,
                       notes=notes or [])


def _provenance(exc):
    """Innermost package module that raised ``exc``."""
    name = "sdd_galerkin"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("sdd_galerkin"):
            name = mod
    return name


def _exit_for(exc):
    if isinstance(exc, BlowupSuspected):
        return EXIT_BLOWUP
    if isinstance(exc, (ConfigError, PreconditionError, SpecViolation)):
        return EXIT_PRECONDITION
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_CHECK_FAILED


class _Run:
    """Artifacts for one output directory."""

    def __init__(self, exp, out, jobs, dump_modes):
        self.exp = exp
        self.out = Path(out)
        self.jobs = max(1, int(jobs))
        self.dump_modes = dump_modes
        self.outcome = RunOutcome(EXIT_OK)

    @property
    def q(self):
        return self.exp.qs[0]

    def add(self, record):
        self.outcome.records.append(record)
        if record.verdict == "BLOWUP":
            self.fail(EXIT_BLOWUP)
        elif record.verdict != "PASS":
            self.fail(EXIT_CHECK_FAILED)

    def fail(self, code):
        self.outcome.exit_code = max(self.outcome.exit_code, code)

    def write_traj(self, name, traj):
        path = self.out / name
        if hasattr(traj, "basis"):
            traj.to_csv(path, q=self.q, dump_modes=self.dump_modes)
        else:
            traj.to_csv(path, q=self.q)
        self.outcome.files.append(name)
        if not traj.completed:
            self.add(_record("simulate", "BLOWUP",
                             {"blowup_time": traj.blowup_time, "file": name},
                             digest(traj.states[-1])))
        return traj

    def solve(self, name, spec=None, config=None):
        return self.write_traj(name, solve(spec or self.exp.problem, config or self.exp.solver))


# ---------------------------------------------------------------------------
# run kinds
# ---------------------------------------------------------------------------


def _simulate(run):
    traj = run.solve("trajectory.csv")
    if traj.completed:
        taus = traj.taus[traj.i0:]
        cols = traj.norm_columns(run.q)
        run.add(_record("simulate", "PASS", {
            "final_time": traj.final_time,
            "final_l2": float(cols["l2"][-1]),
            "tau_min": float(np.min(taus)),
            "tau_max": float(np.max(taus)),
            "initial_lq_ratio": traj.lq_ratio,
            "steps": traj.config.n_steps,
        }, digest(traj.states)))


def _audit_record(check_id, res):
    fitted = dict(res.measured, sample_range=res.sample_range, grid_size=res.grid_size)
    notes = [] if res.passed else [f"witness: {json.dumps(res.witness, sort_keys=True)}"]
    return _record(check_id, "PASS" if res.passed else "FAIL", fitted,
                   digest(res.sample_range, grid=res.grid_size), margins={"witness": res.witness},
                   notes=notes)


def _check_hypotheses(run):
    spec = run.exp.problem
    audit = run.exp.section("audit")
    S = float(audit.get("S", 50.0))
    grid = int(audit.get("grid", 401))
    run.add(_audit_record("growth", check_growth(spec.nonlinearity, S, n=grid)))
    run.add(_audit_record("dissipation", check_dissipation(spec.nonlinearity, S, n=10 * grid)))
    for q in run.exp.qs:
        ce = critical_exponents(spec.nonlinearity, q)
        run.add(_record("critical-exponent", "PASS" if ce.admissible else "FAIL",
                        {"q": q, "q_c": ce.q_c, "p0": ce.p0, "q_bar": ce.q_bar},
                        digest(q=q, q_c=ce.q_c), margins={"q_minus_q_c": q - ce.q_c}))
    amps = audit.get("lipschitz_amplitudes", [0.5, 1.0, 2.0, 4.0])
    basis = build_basis(spec.domain, run.exp.solver.k)
    segs = [approximate_initial(spec.scaled(a).history, basis, run.exp.solver, spec.r,
                                q=run.q).segment for a in amps]
    L_tau = estimate_tau_lipschitz(spec.delay, segs)
    levels = [float(np.sqrt(s.window_max_sq())) for s in segs]
    run.add(_record("delay-lipschitz", "PASS" if np.isfinite(L_tau) else "FAIL",
                    {"L_tau": L_tau, "norm_range": [min(levels), max(levels)],
                     "amplitudes": list(amps)},
                    digest(levels, L_tau=L_tau),
                    notes=["constant estimated on the sampled norm range only"]))


def _converge(run):
    sc = run.exp.solver
    ks = list(run.exp.section("converge")["k_levels"])
    configs = [SolverConfig(k=k, dt=sc.dt, T=sc.T, history_dt=sc.history_dt) for k in ks]
    table = convergence_study(run.exp.problem, configs, jobs=run.jobs)
    for k, traj in zip(ks, table.trajectories):
        run.write_traj(f"trajectory_k{k}.csv", traj)
    run.add(_record("converge", "PASS" if table.nonincreasing else "FAIL",
                    {"k": ks, "differences": table.differences},
                    digest(table.differences, k=ks), margins={"atol": table.atol}))


def _compare_oracle(run):
    oracle = run.exp.section("oracle")
    N = int(oracle.get("N", 256))
    times = [float(t) for t in oracle.get("times", [0.5, 1.0, 2.0])]
    tol = float(oracle.get("tolerance", 5e-3))
    sc = run.exp.solver
    spec = run.exp.problem
    traj = run.solve("trajectory.csv")
    grid = run.write_traj("oracle.csv", fdm_solve(spec, N, sc.dt, sc.T))
    if traj.completed and grid.completed:
        table = compare(traj, grid, times)
        run.add(_record("compare-oracle", "PASS" if table.max_error <= tol else "FAIL",
                        {"times": times, "relative_l2": table.relative_l2, "N": N},
                        digest(table.relative_l2, N=N),
                        margins={"max_error": table.max_error, "tolerance": tol}))


def _verify_estimates(run):
    spec = run.exp.problem
    for q in run.exp.qs:
        require_admissible(spec.nonlinearity, q)
    block = run.exp.section("estimates")
    checks = list(block.get("checks", ESTIMATE_CHECKS))
    amps = [float(a) for a in block.get("amplitudes", DEFAULT_AMPLITUDES)]

    base = run.solve("trajectory.csv")
    family = []
    if FAMILY_CHECKS & set(checks):
        family = run_family(spec, amps, run.exp.solver, jobs=run.jobs)
        for a, tr in zip(amps, family):
            run.write_traj(f"family_a{a:g}.csv", tr)
    if not base.completed or not all(tr.completed for tr in family):
        return

    for q in run.exp.qs:
        if "decay-Lq" in checks:
            run.add(verify_decay(base, "Lq", q))
        if "decay-V1" in checks:
            run.add(verify_decay(base, "V1", q))
        if "smoothing" in checks:
            run.add(verify_smoothing(base, q))
    if "v2-budget" in checks:
        run.add(verify_v2_budget(family, run.q))
    if "linf-bound" in checks:
        rho_star = calibrate_rho_star(family)
        for a, tr in zip(amps, family):
            rec = verify_linf_bound(tr, rho_star)
            rec.notes.append(f"amplitude {a:g}")
            run.add(rec)
    if "absorbing" in checks:
        run.add(absorbing_check(spec, amps, run.exp.solver, trajectories=family))


def _sweep(run):
    block = run.exp.section("sweep")
    keys = sorted(block["parameters"])
    member_kind = block.get("kind", "simulate")
    base = {k: v for k, v in run.exp.raw.items() if k != "sweep"}
    base["kind"] = member_kind
    combos = list(itertools.product(*(block["parameters"][k] for k in keys)))

    def member(i, values):
        raw = base
        for key, value in zip(keys, values):
            raw = set_path(raw, key, value)
        name = f"run_{i:03d}"
        outcome = execute(raw, run.out / name, jobs=1, dump_modes=run.dump_modes)
        return name, dict(zip(keys, values)), outcome

    with ThreadPoolExecutor(max_workers=run.jobs) as pool:
        results = list(pool.map(lambda iv: member(*iv), enumerate(combos)))
    for name, params, outcome in results:
        run.outcome.files.extend(f"{name}/{f}" for f in outcome.files)
        run.outcome.messages.extend(f"{name}: {m}" for m in outcome.messages)
        verdict = {EXIT_OK: "PASS", EXIT_BLOWUP: "BLOWUP"}.get(outcome.exit_code, "FAIL")
        run.outcome.records.append(_record(
            "sweep-run", verdict, {"member": name, "parameters": params,
                                   "exit_code": outcome.exit_code, "kind": member_kind},
            digest(exit_code=outcome.exit_code, parameters=params)))
        run.fail(outcome.exit_code)


KINDS = {
    "simulate": _simulate,
    "check-hypotheses": _check_hypotheses,
    "converge": _converge,
    "compare-oracle": _compare_oracle,
    "verify-estimates": _verify_estimates,
    "sweep": _sweep,
}


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def _versions():
    import numba
    import scipy
    import sympy

    return {
        "sdd_galerkin": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "sympy": sympy.__version__,
    }


def _file_sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def execute(raw_or_exp, out, jobs=1, dump_modes=False):
    """Run an experiment into ``out``; returns a RunOutcome (never raises SddError)."""
    start = time.perf_counter()
    out = Path(out)
    try:
        exp = raw_or_exp if hasattr(raw_or_exp, "problem") else build_experiment(raw_or_exp)
    except ConfigError as exc:
        return RunOutcome(EXIT_PRECONDITION, messages=[f"config: {v}" for v in exc.violations])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return RunOutcome(EXIT_IO, messages=[f"cannot create {out}: {exc}"])

    run = _Run(exp, out, jobs, dump_modes)
    try:
        KINDS[exp.kind](run)
    except (SddError, OSError) as exc:
        run.fail(_exit_for(exc))
        run.outcome.messages.append(f"[{_provenance(exc)}] {type(exc).__name__}: {exc}")

    try:
        with open(out / "report.jsonl", "w", encoding="utf-8") as fh:
            for rec in run.outcome.records:
                fh.write(rec.to_json() + "\n")
        manifest = {
            "config_digest": config_digest(exp.raw),
            "kind": exp.kind,
            "name": exp.raw.get("name", ""),
            "backend": kernels.BACKEND,
            "versions": _versions(),
            "exit_code": run.outcome.exit_code,
            "files": {f: _file_sha(out / f) for f in sorted(run.outcome.files + ["report.jsonl"])},
            "messages": run.outcome.messages,
            "wall_time_s": time.perf_counter() - start,
        }
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        run.fail(EXIT_IO)
        run.outcome.messages.append(f"cannot write artifacts: {exc}")
    return run.outcome


def _print_outcome(outcome, stream):
    for rec in outcome.records:
        line = f"{rec.verdict:6s} {rec.check_id}"
        if rec.check_id == "sweep-run":
            line += f" {rec.fitted['member']} {json.dumps(rec.fitted['parameters'], sort_keys=True)}"
        print(line, file=stream)
        for note in rec.notes:
            print(f"       {note}", file=stream)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sdd-galerkin",
        description="Spectral-Galerkin experiments for reaction-diffusion with state-dependent delay.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config", help="YAML experiment file")
    p_run.add_argument("--out", help="output directory (default: config 'output' or runs/<stem>)")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel trajectories")
    p_run.add_argument("--dump-modes", action="store_true", help="add modal coefficient columns")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_PRECONDITION
    if not os.path.isfile(args.config):
        print(f"error: cannot read config {args.config}", file=sys.stderr)
        return EXIT_IO
    try:
        exp = load_config(args.config)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_PRECONDITION
    out = args.out or exp.raw.get("output") or os.path.join("runs", Path(args.config).stem)
    outcome = execute(exp, out, jobs=args.jobs, dump_modes=args.dump_modes)
    _print_outcome(outcome, sys.stdout)
    for msg in outcome.messages:
        print(f"error: {msg}", file=sys.stderr)
    print(f"exit {outcome.exit_code}: artifacts in {out}", file=sys.stdout)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
