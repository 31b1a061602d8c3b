"""Exponential-Euler integration of the Galerkin system.

Each mode obeys a_j' + mu_j a_j = F_j(t), with F_j the projection of
f(u) + g(u, u(t - tau)) + h(t).  One step is

    a_j <- exp(-mu_j dt) a_j + (1 - exp(-mu_j dt)) / mu_j * F_j(t),

which is exact on the linear part.  The delayed state is read from the
history buffer by linear interpolation; since t - tau <= t it always lies
in the stored span, including tau = 0.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .basis import build_basis, grid_lq_norm, modal_vector, norm, project, synthesize
from .errors import BlowupSuspected, PreconditionError, SpecViolation
from .history import HistorySegment
from .model import ProblemSpec, _apply_f, _apply_g, eval_tau

log = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e12
INITIAL_LQ_RATIO_BOUND = 8.0
CSV_COLUMNS = ("t", "tau", "l2", "lq", "h1", "v2", "linf")


@dataclass(frozen=True)
class SolverConfig:
    """Mode count per axis, time step, horizon and history resolution."""

    k: int
    dt: float
    T: float
    history_dt: Optional[float] = None

    def __post_init__(self):
        if int(self.k) < 1:
            raise PreconditionError("k must be >= 1")
        if not self.dt > 0:
            raise PreconditionError("dt must be positive")
        if not self.T > 0:
            raise PreconditionError("T must be positive")
        if self.history_dt is not None and not self.history_dt > 0:
            raise PreconditionError("history_dt must be positive")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))


def check_config(config, spec, basis):
    r = spec.delay.r
    if r > 0 and config.dt > r / 8:
        raise PreconditionError(f"dt={config.dt} must not exceed r/8={r / 8:g}")
    if abs(config.n_steps * config.dt - config.T) > 1e-9 * max(1.0, config.T):
        raise PreconditionError("T must be an integer multiple of dt")
    mu_k = float(basis.eigenvalues[-1])
    if config.dt > 1.0 / mu_k:
        log.warning("dt=%g exceeds 1/mu_k=%g; explicit nonlinearity may be under-resolved",
                    config.dt, 1.0 / mu_k)


@dataclass(eq=False)
class Trajectory:
    """Galerkin trajectory on [-r, T].

    ``times[:n_history]`` is the ingested initial history (ending at t = 0
    inclusive); later entries are the steps t_n = n dt.  ``taus`` holds the
    realized delay at each t >= 0 (NaN on the initial segment).
    """

    spec: ProblemSpec
    config: SolverConfig
    basis: object
    times: np.ndarray
    states: np.ndarray
    taus: np.ndarray
    n_history: int
    status: str = "completed"
    blowup_time: Optional[float] = None
    lq_ratio: Optional[float] = None

    @property
    def completed(self):
        return self.status == "completed"

    @property
    def i0(self):
        """Index of t = 0."""
        return self.n_history - 1

    @property
    def step_times(self):
        return self.times[self.i0:]

    @property
    def step_states(self):
        return self.states[self.i0:]

    @property
    def final_time(self):
        return float(self.times[-1])

    def initial_segment(self):
        seg = HistorySegment.from_samples(self.spec.delay.r, self.times[:self.n_history],
                                          self.states[:self.n_history], evict=False)
        return seg

    def state_at(self, t):
        i = int(round(t / self.config.dt)) + self.i0
        if not (0 <= i < len(self.times)) or abs(self.times[i] - t) > 1e-9:
            raise PreconditionError(f"t={t} is not a recorded step time")
        return self.states[i]

    def norm_columns(self, q=None):
        """Per-sample norms keyed by the CSV column names."""
        q = q if q is not None else (self.spec.q or 2.0)
        b = self.basis
        return {
            "t": self.times,
            "tau": self.taus,
            "l2": norm(self.states, b, "L2"),
            "lq": norm(self.states, b, "Lq", q=q),
            "h1": norm(self.states, b, "V1"),
            "v2": norm(self.states, b, "V2"),
            "linf": norm(self.states, b, "Linf"),
        }

    def to_csv(self, path, q=None, dump_modes=False):
        write_csv(path, self.norm_columns(q), self.states if dump_modes else None)


def _fmt(x):
    return format(float(x), ".17g")


def write_csv(path, columns, modes=None):
    """Write the trajectory CSV (UTF-8, 17 significant digits)."""
    header = list(CSV_COLUMNS)
    if modes is not None:
        header += [f"a{j + 1}" for j in range(modes.shape[1])]
    n = len(columns["t"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            row = [_fmt(columns[c][i]) for c in CSV_COLUMNS]
            if modes is not None:
                row += [_fmt(v) for v in modes[i]]
            w.writerow(row)


def read_csv(path):
    """Read a trajectory CSV back into float column arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in row] for row in body]).reshape(len(body), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------


@dataclass
class ApproximatedHistory:
    """Projected initial history plus the measured L^q inflation ratio."""

    segment: HistorySegment
    lq_ratio: Optional[float]
    q: float


def history_nodes(r, resolution):
    if r == 0:
        return np.array([0.0])
    m = int(math.ceil(r / resolution - 1e-9))
    return np.linspace(-r, 0.0, m + 1)


def approximate_initial(phi, basis, config, r, q=2.0):
    """Sample phi on [-r, 0] and project each sample onto the first modes.

    The ratio sup_theta |phi_k|_q / sup_theta |phi|_q is measured; a ratio
    above 8 raises SpecViolation.
    """
    res = config.history_dt or config.dt
    thetas = history_nodes(r, res)
    raw = np.empty((len(thetas), basis.quad_weights.shape[0]))
    for i, th in enumerate(thetas):
        try:
            vals = np.asarray(phi(float(th), basis.quad_points), dtype=float)
        except Exception as exc:
            raise PreconditionError(f"initial history failed at theta={th}: {exc}") from exc
        raw[i] = np.broadcast_to(vals, raw.shape[1:])
    modes = getattr(phi, "modes", None)
    if modes is None:
        coeffs = project(raw, basis)
    else:
        # spectral data: take the coefficients exactly instead of by quadrature
        coeffs = np.tile(modal_vector(modes, basis), (len(thetas), 1))
    seg = HistorySegment.from_samples(r, thetas, coeffs, evict=False)
    if q == 2:
        orig = float(np.max(np.sqrt(raw ** 2 @ basis.quad_weights)))
        approx = float(np.max(norm(coeffs, basis, "L2")))
    else:
        orig = float(np.max(grid_lq_norm(raw, basis, q)))
        approx = float(np.max(grid_lq_norm(synthesize(coeffs, basis), basis, q)))
    ratio = approx / orig if orig > 0 else None
    if ratio is not None and ratio > INITIAL_LQ_RATIO_BOUND:
        raise SpecViolation(
            f"projected history inflates the L^{q:g} window norm by {ratio:.3g} "
            f"> {INITIAL_LQ_RATIO_BOUND:g}"
        )
    return ApproximatedHistory(segment=seg, lq_ratio=ratio, q=q)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


class GalerkinStepper:
    """Precomputed exponential-Euler propagator for one (spec, basis, dt)."""

    def __init__(self, spec, basis, dt):
        self.spec = spec
        self.basis = basis
        self.dt = float(dt)
        mu = basis.eigenvalues
        self.decay = np.exp(-mu * dt)
        self.gain = -np.expm1(-mu * dt) / mu
        nl = spec.nonlinearity
        self._poly = nl.polynomial
        if self._poly:
            self._fcoef = np.ascontiguousarray(nl.f, dtype=float)
            self._gcoef = np.ascontiguousarray(nl.g, dtype=float)
        self._zero_nl = self._poly and not np.any(nl.f) and not np.any(nl.g)
        terms = spec.forcing.terms
        self._coefs = [term.coef for term in terms]
        self._shapes = np.array([term.shape_modal(basis) for term in terms]).reshape(
            len(terms), basis.n_modes)

    def forcing(self, t):
        if not self._coefs:
            return None
        d = np.array([float(c(t)) for c in self._coefs])
        return d @ self._shapes

    def nonlinear(self, a, ad):
        b = self.basis
        if self._zero_nl:
            return np.zeros(b.n_modes)
        if self._poly:
            return kernels.modal_nonlinear(a, ad, b.synth, b.proj, self._fcoef, self._gcoef)
        nl = self.spec.nonlinearity
        u = a @ b.synth
        v = ad @ b.synth
        return b.proj @ (_apply_f(nl.f, u) + _apply_g(nl.g, u, v))

    def rhs(self, a, ad, t):
        F = self.nonlinear(a, ad)
        h = self.forcing(t)
        return F if h is None else F + h

    def advance(self, a, ad, t):
        return self.decay * a + self.gain * self.rhs(a, ad, t)


def _healthy(a):
    return bool(np.all(np.isfinite(a))) and float(np.max(np.abs(a))) <= BLOWUP_THRESHOLD


def step(state, seg, t, config, spec, basis=None):
    """Advance one exponential-Euler step from time ``t``.

    The history ``seg`` must cover [t - r, t]; the delayed state is sampled
    at t - tau(t, seg).  Raises BlowupSuspected on non-finite output.
    """
    basis = basis or build_basis(spec.domain, config.k)
    stepper = GalerkinStepper(spec, basis, config.dt)
    tau = eval_tau(spec.delay, t, seg)
    ad = seg.sample(t - tau)
    with np.errstate(all="ignore"):
        out = stepper.advance(np.asarray(state, dtype=float), ad, t)
    if not _healthy(out):
        raise BlowupSuspected(f"non-finite or runaway modal coefficient at t={t + config.dt}",
                              time=t + config.dt)
    return out


def solve(spec, config, basis=None, resume=None):
    """Integrate on [-r, T]; returns a Trajectory (possibly blowup-suspected).

    With ``resume`` (a completed trajectory of the same spec, k and dt) the
    run continues from its final time using its samples as history, and the
    returned trajectory is the concatenation.  Results are bitwise identical
    to a single run over the whole horizon.
    """
    if resume is not None:
        if resume.spec is not spec:
            raise PreconditionError("resume trajectory belongs to a different problem")
        if resume.config.k != config.k or resume.config.dt != config.dt:
            raise PreconditionError("resume needs the same k and dt")
        if not resume.completed:
            raise PreconditionError("cannot resume a blowup-suspected trajectory")
        basis = resume.basis
    basis = basis or build_basis(spec.domain, config.k)
    if basis.k != config.k or basis.domain != spec.domain:
        raise PreconditionError("basis does not match the config/domain")
    check_config(config, spec, basis)
    dt = config.dt
    r = spec.delay.r
    n_end = config.n_steps

    if resume is None:
        init = approximate_initial(spec.history, basis, config, r, q=spec.q or 2.0)
        hist_times = init.segment.times.copy()
        hist_states = init.segment.states.copy()
        n_history = len(hist_times)
        n_start = 0
        lq_ratio = init.lq_ratio
        prior_taus = np.full(n_history, np.nan)
    else:
        hist_times = resume.times
        hist_states = resume.states
        n_history = resume.n_history
        n_start = int(round(resume.final_time / dt))
        lq_ratio = resume.lq_ratio
        prior_taus = resume.taus
        if n_end <= n_start:
            raise PreconditionError("resume horizon must extend past the trajectory end")

    seg = HistorySegment.from_samples(r, hist_times, hist_states)
    stepper = GalerkinStepper(spec, basis, dt)

    n_prior = len(hist_times)
    total = n_prior + (n_end - n_start)
    times = np.empty(total)
    states = np.empty((total, basis.n_modes))
    taus = np.full(total, np.nan)
    times[:n_prior] = hist_times
    states[:n_prior] = hist_states
    taus[:n_prior] = prior_taus

    a = states[n_prior - 1].copy()
    status, blowup_time = "completed", None
    pos = n_prior - 1
    with np.errstate(all="ignore"):
        for n in range(n_start, n_end):
            t = n * dt
            tau = eval_tau(spec.delay, t, seg)
            taus[pos] = tau
            ad = seg.sample(t - tau)
            a = stepper.advance(a, ad, t)
            if not _healthy(a):
                status, blowup_time = "blowup-suspected", (n + 1) * dt
                log.warning("blowup suspected at t=%g", blowup_time)
                break
            pos += 1
            t_next = (n + 1) * dt
            times[pos] = t_next
            states[pos] = a
            seg.push(t_next, a)
        else:
            taus[pos] = eval_tau(spec.delay, n_end * dt, seg)

    return Trajectory(
        spec=spec,
        config=config,
        basis=basis,
        times=times[:pos + 1],
        states=states[:pos + 1],
        taus=taus[:pos + 1],
        n_history=n_history,
        status=status,
        blowup_time=blowup_time,
        lq_ratio=lq_ratio,
    )


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    """Successive differences max_t |u_{k_{i+1}} - u_{k_i}|_2."""

    ks: list
    differences: list
    atol: float = 1e-12
    trajectories: list = field(default_factory=list, repr=False)

    @property
    def nonincreasing(self):
        d = self.differences
        return all(d[i + 1] <= d[i] + self.atol for i in range(len(d) - 1))


def _embed(coarse, fine):
    """Map coarse-basis coefficients into the fine basis ordering."""
    lookup = {tuple(m): i for i, m in enumerate(fine.basis.mode_indices.tolist())}
    cols = [lookup[tuple(m)] for m in coarse.basis.mode_indices.tolist()]
    return cols


def convergence_study(spec, configs, jobs=1):
    """Run one trajectory per config (increasing k) and tabulate differences."""
    configs = list(configs)
    if len(configs) < 3:
        raise PreconditionError("a convergence study needs at least 3 levels")
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        trajs = list(pool.map(lambda c: solve(spec, c), configs))
    for traj in trajs:
        if not traj.completed:
            raise BlowupSuspected(
                f"level k={traj.config.k} blew up at t={traj.blowup_time}", time=traj.blowup_time)
    diffs = []
    for coarse, fine in zip(trajs[:-1], trajs[1:]):
        tc = np.round(coarse.step_times, 12)
        tf = np.round(fine.step_times, 12)
        shared, ic, jf = np.intersect1d(tc, tf, return_indices=True)
        if not len(shared):
            raise PreconditionError("levels share no sample times")
        cols = _embed(coarse, fine)
        sf = fine.step_states[jf]
        sc = np.zeros_like(sf)
        sc[:, cols] = coarse.step_states[ic]
        diffs.append(float(np.max(np.sqrt(np.sum((sf - sc) ** 2, axis=1)))))
    return ConvergenceTable(ks=[c.k for c in configs], differences=diffs, trajectories=trajs)
