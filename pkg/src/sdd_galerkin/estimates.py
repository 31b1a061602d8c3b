"""Norm time series and numerical checks of the a-priori bounds.

The bounds being audited only assert that *some* constants exist, so each
check fits constants to the measured series and then verifies that the
resulting envelope dominates every sample.  A PASS means "an admissible
constant set exists for this run (family)".

Everything downstream of :func:`norm_series` works on the CSV columns
alone, so re-running a check on an exported trajectory reproduces the
report bit for bit.
"""

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import curve_fit

from .errors import BlowupSuspected, PreconditionError
from .model import CRITICAL_EXPONENT_REF, require_admissible
from .solver import read_csv, solve

FLOOR = 1e-14
TAIL_FRACTION = 0.2
HEAD_FRACTION = 0.5
TAIL_SIGMAS = 3.0
SMOOTHING_WINDOW = 0.1
V2_SPREAD_LIMIT = 10.0
ABSORBING_SPREAD = 0.1
# spread denominator floor, relative to the family's largest initial L^2 norm
ABSORBING_FLOOR = 1e-3
# cap on eta * (fit span) so exp(-eta t) and the minimal B stay representable
ETA_SPAN_LIMIT = 30.0

REFS = {
    "decay-Lq": "|u(t)|_q <= B0 ||phi||_{Linf(-r,0;Lq)} exp(-eta0 t) + rho0",
    "decay-V1": "||u(t)||_V1 <= B1 (||phi||_{C(-r,0;V1)} + ||phi||_{Linf(-r,0;Lq)}^(q/2)) "
                "exp(-eta1 t) + rho1",
    "v2-budget": "int_0^T ||u||_V2^2 ds <= C_T (||phi||_{C(-r,0;V1)}^2 + ||phi||_{Linf(-r,0;Lq)}^q + 1)",
    "linf-bound": "|u(t)|_inf <= ||phi||_{Linf(-r,0;Linf)} + rho_*",
    "smoothing": "|u(t)|_inf <= B2 ||phi||_{Linf(-r,0;Lq)}^p_hat t^(-(d+1)/(2q)) exp(-eta2 t) + rho2",
    "absorbing": "tail levels rho_i independent of the initial history",
    "critical-exponent": CRITICAL_EXPONENT_REF,
}


# ---------------------------------------------------------------------------
# series
# ---------------------------------------------------------------------------


@dataclass
class NormSeries:
    """Norms on t >= 0 plus window norms of the initial history.

    ``lq`` maps each exponent to its series; ``phi`` holds
    ``C_L2, C_V1, Linf_Linf`` and ``Linf_Lq`` (a dict keyed by q).
    """

    times: np.ndarray
    l2: np.ndarray
    lq: dict
    v1: np.ndarray
    v2: np.ndarray
    linf: np.ndarray
    taus: np.ndarray
    phi: dict
    d: int = 1
    nonlinearity: object = None
    completed: bool = True


def series_from_columns(columns, q, d=1, nonlinearity=None, completed=True, extra_lq=None):
    """Build a NormSeries from CSV-style columns (history rows have t <= 0)."""
    t = np.asarray(columns["t"], dtype=float)
    hist = t <= 0.0
    i0 = int(np.flatnonzero(hist)[-1])
    lq = {float(q): np.asarray(columns["lq"])[i0:]}
    phi_lq = {float(q): float(np.max(np.asarray(columns["lq"])[hist]))}
    for qq, col in (extra_lq or {}).items():
        lq[float(qq)] = np.asarray(col)[i0:]
        phi_lq[float(qq)] = float(np.max(np.asarray(col)[hist]))
    return NormSeries(
        times=t[i0:],
        l2=np.asarray(columns["l2"])[i0:],
        lq=lq,
        v1=np.asarray(columns["h1"])[i0:],
        v2=np.asarray(columns["v2"])[i0:],
        linf=np.asarray(columns["linf"])[i0:],
        taus=np.asarray(columns["tau"])[i0:],
        phi={
            "C_L2": float(np.max(np.asarray(columns["l2"])[hist])),
            "C_V1": float(np.max(np.asarray(columns["h1"])[hist])),
            "Linf_Linf": float(np.max(np.asarray(columns["linf"])[hist])),
            "Linf_Lq": phi_lq,
        },
        d=d,
        nonlinearity=nonlinearity,
        completed=completed,
    )


def norm_series(traj, qs=None):
    """Norm series of a trajectory for each exponent in ``qs``.

    A blowup-suspected trajectory yields a partial series flagged with
    ``completed=False``.
    """
    if isinstance(traj, NormSeries):
        return traj
    qs = [float(q) for q in (qs or [traj.spec.q or 2.0])]
    cols = traj.norm_columns(qs[0])
    extra = {q: traj.norm_columns(q)["lq"] for q in qs[1:]}
    return series_from_columns(cols, qs[0], d=traj.spec.domain.d,
                               nonlinearity=traj.spec.nonlinearity,
                               completed=traj.completed, extra_lq=extra)


def series_from_csv(path, q, d=1, nonlinearity=None):
    return series_from_columns(read_csv(path), q, d=d, nonlinearity=nonlinearity)


def _as_series(obj, q=None):
    series = norm_series(obj, None if q is None else [q])
    if q is not None and float(q) not in series.lq:
        raise PreconditionError(f"series lacks the L^{q:g} column")
    return series


# ---------------------------------------------------------------------------
# envelope fitting
# ---------------------------------------------------------------------------


@dataclass
class EnvelopeFit:
    """value(t) <= B X0 exp(-eta t) + rho (1 + slack) at every sample."""

    rho: float
    B: float
    eta: float
    slack: float
    X0: float
    margin: float
    dominated: bool

    @property
    def plateau(self):
        return self.rho * (1.0 + self.slack)

    def envelope(self, t):
        return self.B * self.X0 * np.exp(-self.eta * np.asarray(t)) + self.plateau

    def as_dict(self):
        return {"rho": self.rho, "B": self.B, "eta": self.eta, "slack": self.slack,
                "X0": self.X0, "plateau": self.plateau}


def _tail(values):
    n = len(values)
    return values[n - max(1, int(round(TAIL_FRACTION * n))):]


def plateau_level(values):
    """Tail mean and relative slack (3 tail standard deviations)."""
    tail = _tail(np.asarray(values, dtype=float))
    rho = float(np.mean(tail))
    sd = float(np.std(tail))
    slack = TAIL_SIGMAS * sd / rho if rho > 0 else 0.0
    return rho, slack


def _minimal_amplitude(values, X0, decay, plateau):
    """Smallest B with values <= B X0 decay + plateau everywhere."""
    excess = values - plateau
    if X0 <= 0:
        return 0.0
    B = max(0.0, float(np.max(excess / (X0 * decay))))
    # absorb the rounding of the product so domination holds as evaluated
    while B > 0 and np.any(values > B * X0 * decay + plateau):
        B = np.nextafter(B, np.inf) * (1 + 1e-15)
    return B


def _decay_rate(times, values, rho):
    """Rate of A exp(-eta t) + c fitted to the series (relative residuals).

    The rate is capped at ETA_SPAN_LIMIT / (fit span).  A log-linear fit of values - rho on the head seeds the nonlinear fit
    and is the fallback when it does not converge.
    """
    if np.ptp(values) == 0.0:
        return 0.0
    s = times - times[0]
    cap = ETA_SPAN_LIMIT / s[-1]
    head = slice(0, max(2, int(HEAD_FRACTION * len(values))))
    y = np.log(np.maximum(values[head] - rho, FLOOR))
    seed = max(0.0, -float(np.polyfit(s[head], y, 1)[0]))

    def model(x, A, eta, c):
        return A * np.exp(-eta * x) + c

    try:
        popt, _ = curve_fit(
            model, s, values,
            p0=[max(values[0] - rho, FLOOR), max(seed, 1e-3), max(rho, 0.0)],
            sigma=np.maximum(np.abs(values), FLOOR),
            bounds=([0.0, 0.0, 0.0], [np.inf, np.inf, np.inf]),
            maxfev=10000,
        )
    except (RuntimeError, ValueError):
        return min(seed, cap)
    eta = float(popt[1])
    # a smaller rate only loosens the envelope, so capping is always sound
    return min(eta if np.isfinite(eta) else seed, cap)


def fit_envelope(times, values, X0):
    """Fit rho (tail mean), eta (exponential-plus-constant fit) and minimal B."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(values) < 10:
        raise PreconditionError("envelope fit needs at least 10 samples")
    if not np.all(np.isfinite(values)):
        raise PreconditionError("series contains non-finite values")
    rho, slack = plateau_level(values)
    plateau = rho * (1.0 + slack)
    eta = _decay_rate(times, values, rho)
    X0 = float(X0)
    B = _minimal_amplitude(values, X0, np.exp(-eta * times), plateau)
    env = B * X0 * np.exp(-eta * times) + plateau
    margin = float(np.min(env - values))
    return EnvelopeFit(rho=rho, B=B, eta=eta, slack=slack, X0=X0,
                       margin=margin, dominated=bool(margin >= 0))


# ---------------------------------------------------------------------------
# report records
# ---------------------------------------------------------------------------


@dataclass
class CheckRecord:
    """One report entry; ``artifacts`` is kept in memory only."""

    check_id: str
    reference: str
    verdict: str
    fitted: dict
    margins: dict
    inputs_digest: str
    notes: list = field(default_factory=list)
    artifacts: object = field(default=None, repr=False)

    @property
    def passed(self):
        return self.verdict == "PASS"

    def to_dict(self):
        return {
            "check_id": self.check_id,
            "reference": self.reference,
            "verdict": self.verdict,
            "fitted": self.fitted,
            "margins": self.margins,
            "inputs_digest": self.inputs_digest,
            "notes": self.notes,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def digest(*arrays, **params):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    h.update(json.dumps(params, sort_keys=True, default=_jsonable).encode())
    return h.hexdigest()[:16]


def _verdict(ok):
    return "PASS" if ok else "FAIL"


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def verify_decay(traj, kind, q, nonlinearity=None):
    """Exponential decay toward a plateau for the L^q norm or the V1 norm."""
    series = _as_series(traj, q)
    nl = nonlinearity or series.nonlinearity
    if nl is None:
        raise PreconditionError("decay check needs the declared growth constants")
    ce = require_admissible(nl, q)
    q = float(q)
    kind_u = kind.upper()
    if kind_u == "LQ":
        values, X0, cid = series.lq[q], series.phi["Linf_Lq"][q], "decay-Lq"
    elif kind_u == "V1":
        values = series.v1
        X0 = series.phi["C_V1"] + series.phi["Linf_Lq"][q] ** (q / 2.0)
        cid = "decay-V1"
    else:
        raise ValueError(f"unknown decay kind {kind!r}")
    fit = fit_envelope(series.times, values, X0)
    ok = fit.dominated and (fit.eta > 0 or fit.B == 0.0)
    return CheckRecord(
        check_id=cid, reference=REFS[cid], verdict=_verdict(ok),
        fitted=dict(fit.as_dict(), q=q, q_c=ce.q_c),
        margins={"min_envelope_gap": fit.margin},
        inputs_digest=digest(series.times, values, X0=X0, q=q),
        artifacts=fit,
    )


def v2_integral(series):
    return float(trapezoid(series.v2 ** 2, series.times))


def verify_v2_budget(trajs, q=None):
    """Integral of ||u||_V2^2 over [0, T] against the initial-data budget.

    Ratios are integral / (||phi||_{C V1}^2 + ||phi||_{Linf Lq}^q + 1).  The
    common constant C_T is the largest ratio; PASS requires the ratios not
    to grow with amplitude: every ratio is at most 10 times the ratio of
    the smallest-amplitude run.
    """
    trajs = list(trajs)
    if len(trajs) < 3:
        raise PreconditionError("V2 budget check needs at least 3 runs")
    series = [_as_series(t, q) for t in trajs]
    q = float(q if q is not None else next(iter(series[0].lq)))
    ints, budgets, amps = [], [], []
    for s in series:
        ints.append(v2_integral(s))
        budgets.append(s.phi["C_V1"] ** 2 + s.phi["Linf_Lq"][q] ** q + 1.0)
        amps.append(s.phi["C_L2"])
    ratios = np.array(ints) / np.array(budgets)
    ref = ratios[int(np.argmin(amps))]
    spread = float(np.max(ratios) / ref) if ref > 0 else (1.0 if not np.any(ratios) else np.inf)
    ok = bool(np.all(np.isfinite(ratios))) and spread <= V2_SPREAD_LIMIT
    return CheckRecord(
        check_id="v2-budget", reference=REFS["v2-budget"], verdict=_verdict(ok),
        fitted={"C_T": float(np.max(ratios)), "ratios": ratios.tolist(),
                "integrals": ints, "q": q},
        margins={"spread": spread, "limit": V2_SPREAD_LIMIT},
        inputs_digest=digest(*[s.v2 for s in series], q=q),
    )


def linf_tail_level(series):
    rho, slack = plateau_level(series.linf)
    return rho * (1.0 + slack)


def calibrate_rho_star(trajs):
    """Common L^inf tail level across a run family."""
    return max(linf_tail_level(_as_series(t)) for t in trajs)


def verify_linf_bound(traj, rho_star=None):
    """sup_t |u(t)|_inf against the history's L^inf bound plus rho_*."""
    series = _as_series(traj)
    if rho_star is None:
        rho_star = linf_tail_level(series)
    peak = float(np.max(series.linf))
    bound = series.phi["Linf_Linf"] + rho_star
    return CheckRecord(
        check_id="linf-bound", reference=REFS["linf-bound"], verdict=_verdict(peak <= bound),
        fitted={"rho_star": float(rho_star), "phi_Linf_Linf": series.phi["Linf_Linf"]},
        margins={"bound_minus_peak": bound - peak},
        inputs_digest=digest(series.linf, rho_star=float(rho_star)),
    )


def verify_smoothing(traj, q, nonlinearity=None):
    """Early-time L^inf bound with the t^(-(d+1)/(2q)) singular factor.

    eta2 and rho2 come from an envelope fit on t >= 0.1; B2 is then the
    smallest constant making the full bound hold at every t > 0.
    The exponent threshold used for admissibility is q_c.
    """
    series = _as_series(traj, q)
    nl = nonlinearity or series.nonlinearity
    if nl is None:
        raise PreconditionError("smoothing check needs the declared growth constants")
    ce = require_admissible(nl, q)
    q = float(q)
    t, linf = series.times, series.linf
    early = (t > 0) & (t <= SMOOTHING_WINDOW)
    if not np.any(early):
        raise PreconditionError("trajectory has no samples in (0, 0.1]")
    late = t >= SMOOTHING_WINDOW
    X0 = series.phi["Linf_Lq"][q] ** nl.p_hat
    fit = fit_envelope(t[late], linf[late], X0)
    eta2, rho2 = fit.eta, fit.plateau
    exponent = (series.d + 1) / (2.0 * q)
    pos = t > 0
    shape = t[pos] ** (-exponent) * np.exp(-eta2 * t[pos])
    product = np.maximum(linf[pos] - rho2, 0.0) / shape
    finite = bool(np.all(np.isfinite(product)))
    early_sup = float(np.max(product[early[pos]]))
    if X0 > 0:
        B2 = _minimal_amplitude(linf[pos], X0, shape, rho2)
        gap = float(np.min(B2 * X0 * shape + rho2 - linf[pos]))
    else:
        B2, gap = 0.0, float(rho2 - np.max(linf[pos]))
    ok = finite and gap >= 0
    return CheckRecord(
        check_id="smoothing", reference=REFS["smoothing"], verdict=_verdict(ok),
        fitted={"B2": B2, "eta2": eta2, "rho2": rho2, "exponent": exponent,
                "p_hat": nl.p_hat, "q": q, "q_c": ce.q_c, "early_sup_product": early_sup},
        margins={"min_bound_gap": gap},
        inputs_digest=digest(t, linf, q=q),
        notes=["admissibility threshold for the smoothing exponent taken as q_c"],
    )


def run_family(spec, amplitudes, config, jobs=1):
    """Solve ``spec`` for each history amplitude; order follows ``amplitudes``."""
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(lambda a: solve(spec.scaled(a), config), amplitudes))


def absorbing_check(spec, amplitudes, config, jobs=1, trajectories=None):
    """Terminal |u(T)|_2 should not depend on the initial amplitude.

    The spread (max - min) / mean uses a denominator floor of 1e-3 times
    the largest initial L^2 norm, so families decaying to zero compare
    against the scale of their data rather than against round-off.
    """
    amplitudes = list(amplitudes)
    if len(amplitudes) < 3:
        raise PreconditionError("absorbing check needs at least 3 amplitudes")
    if max(amplitudes) < 10 * min(amplitudes):
        raise PreconditionError("amplitudes must span at least one decade")
    trajs = trajectories or run_family(spec, amplitudes, config, jobs)
    for a, tr in zip(amplitudes, trajs):
        if not tr.completed:
            raise BlowupSuspected(f"amplitude {a} blew up at t={tr.blowup_time}",
                                  time=tr.blowup_time)
    terminal = np.array([float(np.sqrt(np.sum(tr.states[-1] ** 2))) for tr in trajs])
    initial = max(float(np.max(np.sqrt(np.sum(tr.states[:tr.n_history] ** 2, axis=1))))
                  for tr in trajs)
    mean = float(np.mean(terminal))
    floor = ABSORBING_FLOOR * initial
    spread = float((terminal.max() - terminal.min()) / max(mean, floor)) if initial > 0 else 0.0
    return CheckRecord(
        check_id="absorbing", reference=REFS["absorbing"],
        verdict=_verdict(spread <= ABSORBING_SPREAD),
        fitted={"terminal_l2": terminal.tolist(), "amplitudes": amplitudes, "T": config.T},
        margins={"relative_spread": spread, "limit": ABSORBING_SPREAD, "floor": floor},
        inputs_digest=digest(terminal, amplitudes=amplitudes),
        artifacts=trajs,
    )
