import logging
import math

import numpy as np
import pytest

from conftest import (
    PI,
    dissipative_problem,
    heat_problem,
    manufactured_exact,
    manufactured_problem,
)
from sdd_galerkin.basis import DomainSpec, build_basis, norm, project
from sdd_galerkin.errors import PreconditionError, SpecViolation
from sdd_galerkin.history import HistorySegment
from sdd_galerkin.model import (
    DelaySpec,
    ForcingSpec,
    ForcingTerm,
    NonlinearitySpec,
    ProblemSpec,
    mode_history,
)
import sdd_galerkin.solver as solver_mod
from sdd_galerkin.solver import (
    SolverConfig,
    approximate_initial,
    convergence_study,
    read_csv,
    solve,
    step,
)

ZERO_NL = NonlinearitySpec(f=np.zeros(1), g=np.zeros((1, 1)), p=1, beta=1, beta0=3)


def linear_problem(history, forcing=(), r=0.5, domain=PI):
    return ProblemSpec(domain, ZERO_NL, DelaySpec("constant", r=r, tau0=r), history,
                       ForcingSpec(tuple(forcing)), q=2.0)


def l2_error(traj, t, exact):
    b = traj.basis
    ref = project(exact(t, b.quad_points), b)
    return np.linalg.norm(traj.state_at(t) - ref) / np.linalg.norm(ref)


# -- single steps -------------------------------------------------------------


def one_mode_segment(value=1.0):
    return HistorySegment.from_samples(0.0, [0.0], [[value]])


def test_step_pure_decay_halves():
    spec = linear_problem(mode_history(PI, {1: 1.0}), r=0.0)
    dt = math.log(2.0)
    cfg = SolverConfig(k=1, dt=dt, T=dt)
    out = step(np.array([1.0]), one_mode_segment(), 0.0, cfg, spec)
    assert out[0] == pytest.approx(0.5, rel=1e-15)


def test_step_constant_forcing_fixed_point():
    c = np.array([0.3, -1.2, 2.0])
    mu = np.array([1.0, 4.0, 9.0])
    term = ForcingTerm(lambda t: 1.0, {j + 1: mu[j] * c[j] for j in range(3)}, 20.0)
    spec = linear_problem(mode_history(PI, {1: 0.0}), [term], r=0.0)
    cfg = SolverConfig(k=3, dt=0.01, T=0.01)
    seg = HistorySegment.from_samples(0.0, [0.0], [c])
    out = step(c, seg, 0.0, cfg, spec)
    assert np.allclose(out, c, rtol=1e-14, atol=0)


def test_step_unit_forcing_from_rest():
    term = ForcingTerm(lambda t: 1.0, {1: 1.0}, 1.0)
    spec = linear_problem(mode_history(PI, {1: 0.0}), [term], r=0.0)
    dt = 0.01
    out = step(np.zeros(1), one_mode_segment(0.0), 0.0, SolverConfig(k=1, dt=dt, T=dt), spec)
    assert out[0] == pytest.approx(-math.expm1(-dt), rel=1e-15)


# -- initial data -----------------------------------------------------------


def test_initial_projection_of_first_mode_is_exact():
    b = build_basis(PI, 4)
    init = approximate_initial(mode_history(PI, {1: 1.0}), b, SolverConfig(4, 0.01, 1.0), 0.5,
                               q=8)
    assert init.lq_ratio == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(init.segment.states, [[1, 0, 0, 0]], atol=1e-13)
    assert init.segment.earliest_time == -0.5


def test_truncation_contracts_l2():
    modes = {j: 1.0 / j for j in range(1, 11)}
    b = build_basis(PI, 5)
    init = approximate_initial(mode_history(PI, modes), b, SolverConfig(5, 0.1, 1.0), 1.0, q=2)
    full = math.sqrt(sum(c * c for c in modes.values()))
    assert np.all(norm(init.segment.states, b, "L2") <= full)
    assert init.lq_ratio <= 1.0


def test_lq_ratio_of_cubed_sine():
    # independent oracle: projection onto modes 1..2 keeps (3/4) sin x
    q = 4.0
    raw = (3 * np.pi / 8) ** 0.25
    phi = lambda th, x: np.sin(x) ** 3 / raw  # noqa: E731
    b = build_basis(PI, 2)
    init = approximate_initial(phi, b, SolverConfig(2, 0.1, 1.0), 0.5, q=q)
    x, w = np.polynomial.legendre.leggauss(400)
    x = (x + 1) * np.pi / 2
    w = w * np.pi / 2
    lq = lambda v: np.sum(w * np.abs(v) ** q) ** (1 / q)  # noqa: E731
    expected = lq(0.75 * np.sin(x)) / lq(np.sin(x) ** 3)
    assert init.lq_ratio == pytest.approx(expected, rel=1e-10)
    assert init.lq_ratio <= 8


def test_lq_inflation_guard(monkeypatch):
    # phi = 1 projects onto (4/pi) sin x, whose sup exceeds 1 by 4/pi
    b = build_basis(PI, 1)
    init = approximate_initial(lambda th, x: np.ones_like(x), b, SolverConfig(1, 0.1, 1.0),
                               0.0, q=200.0)
    assert init.lq_ratio == pytest.approx(4 / np.pi, rel=2e-2)
    monkeypatch.setattr(solver_mod, "INITIAL_LQ_RATIO_BOUND", 1.2)
    with pytest.raises(SpecViolation, match="> 1.2"):
        approximate_initial(lambda th, x: np.ones_like(x), b, SolverConfig(1, 0.1, 1.0), 0.0,
                            q=200.0)


# -- whole trajectories -------------------------------------------------------


def test_heat_first_mode_exact():
    traj = solve(heat_problem(), SolverConfig(k=8, dt=1e-3, T=1.0))
    assert norm(traj.states[-1], traj.basis, "L2") == pytest.approx(math.exp(-1), abs=1e-12)
    l2 = norm(traj.step_states, traj.basis, "L2")
    assert np.max(np.abs(l2 - np.exp(-traj.step_times))) < 1e-12


def test_linear_exactness_every_mode():
    a0 = {1: 1.0, 2: -0.5, 5: 0.25}
    traj = solve(linear_problem(mode_history(PI, a0)), SolverConfig(k=6, dt=0.01, T=0.5))
    mu = traj.basis.eigenvalues
    start = np.array([a0.get(j, 0.0) for j in range(1, 7)])
    for n in (1, 10, 50):
        expected = np.exp(-mu * n * 0.01) * start
        assert np.allclose(traj.step_states[n], expected, rtol=1e-12, atol=1e-300)


def test_heat_in_square():
    sq = DomainSpec(d=2, L=np.pi, L2=np.pi)
    spec = linear_problem(mode_history(sq, {(1, 1): 1.0}), domain=sq)
    traj = solve(spec, SolverConfig(k=4, dt=0.01, T=0.5))
    assert norm(traj.states[-1], traj.basis, "L2") == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_galerkin_nesting():
    term = ForcingTerm(np.cos, {2: 1.0}, 1.0)
    spec = linear_problem(mode_history(PI, {1: 1.0, 2: 0.5}), [term])
    traj = solve(spec, SolverConfig(k=8, dt=0.01, T=1.0))
    assert np.all(traj.states[:, 2:] == 0.0)


def test_manufactured_solution_accuracy():
    traj = solve(manufactured_problem(), SolverConfig(k=3, dt=1e-3, T=2.0))
    assert l2_error(traj, 2.0, manufactured_exact) < 1e-3


def oscillating_problem():
    """u*(t,x) = cos(t) sin x with f = -u^3, g = v, tau = 1.

    u* is not a heat solution, so the exponential Euler error is O(dt).
    """
    nl = NonlinearitySpec(f=np.array([0, 0, 0, -1.0]), g=np.array([[0.0, 1.0]]),
                          p=3, beta=1, beta0=3)
    terms = (
        ForcingTerm(lambda t: np.cos(t) - np.sin(t) - np.cos(t - 1.0), np.sin, 3.0),
        ForcingTerm(lambda t: np.cos(t) ** 3, lambda x: np.sin(x) ** 3, 1.0),
    )
    return ProblemSpec(PI, nl, DelaySpec("constant", r=1.0, tau0=1.0),
                       lambda th, x: np.cos(th) * np.sin(x), ForcingSpec(terms), q=8.0)


def test_first_order_in_time():
    spec = oscillating_problem()
    exact = lambda t, x: np.cos(t) * np.sin(x)  # noqa: E731
    errs = [l2_error(solve(spec, SolverConfig(k=8, dt=dt, T=2.0)), 2.0, exact)
            for dt in (4e-3, 2e-3, 1e-3)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(1.7 <= r <= 2.3 for r in ratios), (errs, ratios)


def test_delays_recorded_in_range():
    traj = solve(dissipative_problem(8.0), SolverConfig(k=16, dt=1e-3, T=1.0))
    taus = traj.taus[traj.i0:]
    assert np.all(np.isfinite(taus))
    assert np.all((taus >= 0) & (taus <= 0.5))
    assert np.all(np.isnan(traj.taus[:traj.i0]))


def test_dissipative_norm_nonincreasing():
    spec = dissipative_problem(3.0, eps=0.0)
    traj = solve(spec, SolverConfig(k=16, dt=1e-3, T=3.0))
    l2 = norm(traj.step_states, traj.basis, "L2")
    assert np.all(np.diff(l2) <= 1e-8)


def test_bitwise_determinism():
    cfg = SolverConfig(k=16, dt=1e-3, T=0.5)
    a = solve(dissipative_problem(), cfg)
    b = solve(dissipative_problem(), cfg)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.taus, b.taus, equal_nan=True)


def test_concatenation_bitwise():
    spec = dissipative_problem()
    whole = solve(spec, SolverConfig(k=16, dt=1e-3, T=2.0))
    first = solve(spec, SolverConfig(k=16, dt=1e-3, T=1.0))
    joined = solve(spec, SolverConfig(k=16, dt=1e-3, T=2.0), resume=first)
    assert np.array_equal(whole.times, joined.times)
    assert np.array_equal(whole.states, joined.states)
    assert np.array_equal(whole.taus, joined.taus, equal_nan=True)


def test_resume_preconditions():
    spec = dissipative_problem()
    first = solve(spec, SolverConfig(k=8, dt=1e-3, T=0.1))
    with pytest.raises(PreconditionError):
        solve(dissipative_problem(), SolverConfig(k=8, dt=1e-3, T=0.2), resume=first)
    with pytest.raises(PreconditionError):
        solve(spec, SolverConfig(k=8, dt=5e-4, T=0.2), resume=first)
    with pytest.raises(PreconditionError):
        solve(spec, SolverConfig(k=8, dt=1e-3, T=0.1), resume=first)


def test_blowup_is_reported_with_partial_trajectory():
    nl = NonlinearitySpec(f=np.array([0, 0, 0, 1.0]), g=np.zeros((1, 1)), p=3, beta=1,
                          beta0=3)
    spec = ProblemSpec(PI, nl, DelaySpec("constant", r=0.1, tau0=0.1),
                       mode_history(PI, {1: 10.0}), q=8.0)
    traj = solve(spec, SolverConfig(k=8, dt=1e-3, T=1.0))
    assert traj.status == "blowup-suspected"
    assert 0 < traj.blowup_time < 1.0
    assert np.all(np.isfinite(traj.states))
    assert traj.final_time < traj.blowup_time


def test_config_constraints(caplog):
    with pytest.raises(PreconditionError):
        solve(heat_problem(r=0.5), SolverConfig(k=4, dt=0.1, T=1.0))
    with pytest.raises(PreconditionError):
        solve(heat_problem(), SolverConfig(k=4, dt=0.01, T=0.015))
    with pytest.raises(PreconditionError):
        SolverConfig(k=0, dt=0.01, T=1.0)
    with caplog.at_level(logging.WARNING):
        solve(heat_problem(), SolverConfig(k=16, dt=0.05, T=0.1))
    assert any("1/mu_k" in rec.message for rec in caplog.records)


def test_zero_delay_uses_current_state():
    spec = ProblemSpec(PI, NonlinearitySpec(f=np.zeros(1), g=np.array([[0.0, -1.0]]), p=1,
                                            beta=1, beta0=3),
                       DelaySpec("constant", r=0.0, tau0=0.0), mode_history(PI, {1: 1.0}))
    traj = solve(spec, SolverConfig(k=2, dt=1e-3, T=1.0))
    # u_t - u_xx = -u: first mode decays like exp(-2t) up to O(dt)
    assert traj.states[-1, 0] == pytest.approx(math.exp(-2.0), rel=2e-3)


def test_csv_roundtrip(tmp_path):
    traj = solve(dissipative_problem(), SolverConfig(k=8, dt=1e-3, T=0.2))
    path = tmp_path / "traj.csv"
    traj.to_csv(path, q=8, dump_modes=True)
    cols = read_csv(path)
    ref = traj.norm_columns(8)
    for key in ("t", "l2", "lq", "h1", "v2", "linf"):
        assert np.array_equal(cols[key], ref[key])
    assert np.array_equal(cols["a3"], traj.states[:, 2])
    assert np.isnan(cols["tau"][0])
    assert path.read_text().splitlines()[0].startswith("t,tau,l2,lq,h1,v2,linf,a1")


# -- convergence ---------------------------------------------------------------


def test_heat_convergence_differences_vanish():
    cfgs = [SolverConfig(k=k, dt=1e-3, T=1.0) for k in (2, 4, 8)]
    table = convergence_study(heat_problem(), cfgs)
    assert table.differences == [0.0, 0.0]
    assert table.nonincreasing


def test_manufactured_convergence_nonincreasing():
    cfgs = [SolverConfig(k=k, dt=1e-3, T=2.0) for k in (4, 8, 16)]
    assert convergence_study(manufactured_problem(), cfgs, jobs=3).nonincreasing


def test_dissipative_convergence_nonincreasing():
    spec = dissipative_problem()
    cfgs = [SolverConfig(k=k, dt=1e-3, T=2.0) for k in (8, 16, 32)]
    table = convergence_study(spec, cfgs, jobs=3)
    assert table.nonincreasing
    assert table.differences[-1] < 1e-6


def test_convergence_needs_three_levels():
    with pytest.raises(PreconditionError):
        convergence_study(heat_problem(), [SolverConfig(4, 1e-3, 1.0)] * 2)
