"""Problem definition: nonlinearities, forcing, delay, and hypothesis audits.

The governing system is

    u_t - Laplacian(u) = f(u) + g(u, u(t - tau(t, u_t))) + h(t, x),   u = 0 on the boundary,

with initial history ``phi(theta, x)`` on ``theta in [-r, 0]``.
Polynomial f and g are stored as coefficient arrays so the solver can hand
them to compiled kernels; arbitrary vectorized callables are accepted too.
"""

from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .basis import DomainSpec, eigenfunction, modal_vector
from .errors import BlowupSuspected, PreconditionError, SpecViolation

# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def _as_f(f):
    if callable(f):
        return f
    coef = np.atleast_1d(np.asarray(f, dtype=float))
    if coef.ndim != 1 or coef.size == 0:
        raise ValueError("f coefficients must be a non-empty 1D sequence")
    coef.setflags(write=False)
    return coef


def _as_g(g):
    if callable(g):
        return g
    coef = np.atleast_2d(np.asarray(g, dtype=float))
    if coef.ndim != 2 or coef.size == 0:
        raise ValueError("g coefficients must be a non-empty 2D array c[i, j] of u**i v**j")
    coef = np.ascontiguousarray(coef)
    coef.setflags(write=False)
    return coef


@dataclass(frozen=True, eq=False)
class NonlinearitySpec:
    """Reaction terms f(u), g(u, v) and their declared growth constants.

    ``f`` is either ascending polynomial coefficients ``[c0, c1, ...]`` or a
    vectorized callable.  ``g`` is either a coefficient matrix with
    ``g[i, j]`` multiplying ``u**i * v**j`` or a vectorized callable of
    ``(u, v)``.  ``p, beta, a0, b0`` are the growth constants and
    ``beta0, Lambda, N`` the dissipation constants.
    """

    f: object
    g: object
    p: float = 1.0
    beta: float = 1.0
    a0: float = 1.0
    b0: float = 1.0
    beta0: float = 2.0
    Lambda: float = 1.0
    N: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "f", _as_f(self.f))
        object.__setattr__(self, "g", _as_g(self.g))
        for name in ("p", "beta", "a0", "b0", "beta0", "Lambda"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive")
        if self.N < 0:
            raise PreconditionError("N must be nonnegative")
        if not self.beta0 > self.beta:
            raise PreconditionError(
                f"dissipation exponent beta0={self.beta0} must exceed beta={self.beta}"
            )

    @property
    def polynomial(self):
        return not callable(self.f) and not callable(self.g)

    @property
    def p_hat(self):
        return max(self.p, self.beta)


def power_dissipation(lam, beta0, lower=()):
    """f(u) = -lam * u |u|**(beta0 - 1) + sum_i lower[i] u**i.

    Returns coefficients when ``beta0`` is an odd integer, else a callable.
    """
    lower = np.asarray(lower, dtype=float)
    b = float(beta0)
    if b.is_integer() and int(b) % 2 == 1:
        coef = np.zeros(max(int(b) + 1, lower.size))
        coef[: lower.size] = lower
        coef[int(b)] -= lam
        return coef

    def f(u):
        u = np.asarray(u, dtype=float)
        out = -lam * u * np.abs(u) ** (b - 1.0)
        for i, c in enumerate(lower):
            out = out + c * u ** i
        return out

    return f


def _apply_f(f, u):
    if callable(f):
        return np.broadcast_to(np.asarray(f(u), dtype=float), np.shape(u))
    return np.polynomial.polynomial.polyval(u, f)


def _apply_g(g, u, v):
    if callable(g):
        return np.broadcast_to(np.asarray(g(u, v), dtype=float), np.broadcast(u, v).shape)
    return np.polynomial.polynomial.polyval2d(u, v, g)


def eval_f(spec, u):
    """f evaluated pointwise; non-finite output raises BlowupSuspected."""
    nl = spec.nonlinearity if isinstance(spec, ProblemSpec) else spec
    with np.errstate(over="ignore", invalid="ignore"):
        out = _apply_f(nl.f, np.asarray(u, dtype=float))
    if not np.all(np.isfinite(out)):
        raise BlowupSuspected("f produced a non-finite value")
    return out if np.ndim(out) else float(out)


def eval_g(spec, u, v):
    """g evaluated pointwise; non-finite output raises BlowupSuspected."""
    nl = spec.nonlinearity if isinstance(spec, ProblemSpec) else spec
    with np.errstate(over="ignore", invalid="ignore"):
        out = _apply_g(nl.g, np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    if not np.all(np.isfinite(out)):
        raise BlowupSuspected("g produced a non-finite value")
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# hypothesis audits
# ---------------------------------------------------------------------------


@dataclass
class HypothesisCheck:
    """Outcome of a sampled hypothesis audit.

    ``witness`` holds the worst violating sample when ``passed`` is False.
    ``measured`` collects the tightest observed quantities.
    """

    hypothesis: str
    passed: bool
    witness: Optional[dict]
    measured: dict
    sample_range: float
    grid_size: int


def _nl(spec):
    return spec.nonlinearity if isinstance(spec, ProblemSpec) else spec


def check_growth(spec, S, n=401):
    """Sampled audit of |f(u)| <= a0(|u|^p + 1), |g(u,v)| <= b0(|u|^b + |v|^b + 1)."""
    if not S > 0:
        raise PreconditionError("sample range S must be positive")
    nl = _nl(spec)
    u = np.linspace(-S, S, int(n))
    with np.errstate(over="ignore", invalid="ignore"):
        rf = np.abs(_apply_f(nl.f, u)) / (nl.a0 * (np.abs(u) ** nl.p + 1.0))
        U, V = np.meshgrid(u, u, indexing="ij")
        rg = np.abs(_apply_g(nl.g, U, V)) / (
            nl.b0 * (np.abs(U) ** nl.beta + np.abs(V) ** nl.beta + 1.0)
        )
    rf = np.where(np.isfinite(rf), rf, np.inf)
    rg = np.where(np.isfinite(rg), rg, np.inf)
    tol = 1e-12
    witness = None
    worst_f = int(np.argmax(rf))
    worst_g = np.unravel_index(int(np.argmax(rg)), rg.shape)
    if rf[worst_f] > 1 + tol and rf[worst_f] >= rg[worst_g]:
        witness = {"term": "f", "u": float(u[worst_f]), "ratio": float(rf[worst_f])}
    elif rg[worst_g] > 1 + tol:
        witness = {"term": "g", "u": float(U[worst_g]), "v": float(V[worst_g]),
                   "ratio": float(rg[worst_g])}
    return HypothesisCheck(
        hypothesis="growth",
        passed=witness is None,
        witness=witness,
        measured={"max_ratio_f": float(rf.max()), "max_ratio_g": float(rg.max())},
        sample_range=float(S),
        grid_size=int(n),
    )


def check_dissipation(spec, S, n=4001):
    """Sampled audit of f(s)s <= -Lambda |s|^(beta0+1) + N.

    Also returns the smallest admissible N for the declared (beta0, Lambda),
    refined around the sampled maximum with a bounded scalar search.
    """
    if not S > 0:
        raise PreconditionError("sample range S must be positive")
    nl = _nl(spec)
    s = np.linspace(-S, S, int(n))

    def excess(x):
        with np.errstate(over="ignore", invalid="ignore"):
            return _apply_f(nl.f, x) * x + nl.Lambda * np.abs(x) ** (nl.beta0 + 1.0)

    m = excess(s)
    m = np.where(np.isfinite(m), m, np.inf)
    i = int(np.argmax(m))
    n_min = float(m[i])
    if np.isfinite(n_min) and 0 < i < len(s) - 1:
        res = minimize_scalar(lambda x: -float(excess(np.array([x]))[0]),
                              bounds=(s[i - 1], s[i + 1]), method="bounded",
                              options={"xatol": 1e-12})
        n_min = max(n_min, -float(res.fun))
    with np.errstate(over="ignore", invalid="ignore"):
        scale = np.abs(_apply_f(nl.f, s) * s) + nl.Lambda * np.abs(s) ** (nl.beta0 + 1.0)
    # cancellation in f(s)s + Lambda|s|^(beta0+1) is ~1e-15 relative
    slack = m - nl.N - 1e-12 * np.where(np.isfinite(scale), scale, 0.0)
    j = int(np.argmax(slack))
    witness = None
    if slack[j] > 0:
        witness = {"s": float(s[j]), "excess": float(m[j])}
    return HypothesisCheck(
        hypothesis="dissipation",
        passed=witness is None,
        witness=witness,
        measured={"minimal_N": n_min},
        sample_range=float(S),
        grid_size=int(n),
    )


check_H0 = check_growth
check_H1 = check_dissipation


@dataclass(frozen=True)
class CriticalExponents:
    q_c: float
    p0: float
    q_bar: Optional[float]
    q: Optional[float]

    @property
    def admissible(self):
        return self.q is not None and self.q > self.q_c


CRITICAL_EXPONENT_REF = "q_c = max{2p, 2beta, p0}, p0 = (beta0 - 1) beta / (beta0 - beta)"


def critical_exponents(spec, q=None):
    """Critical exponent q_c, auxiliary p0 and qbar(q) = (q - 1)/beta0 + 1."""
    nl = _nl(spec)
    if not nl.beta0 > nl.beta:
        raise PreconditionError(f"beta0 must exceed beta ({CRITICAL_EXPONENT_REF})")
    p0 = (nl.beta0 - 1.0) / (nl.beta0 - nl.beta) * nl.beta
    q_c = max(2.0 * nl.p, 2.0 * nl.beta, p0)
    q_bar = None if q is None else (q - 1.0) / nl.beta0 + 1.0
    return CriticalExponents(q_c=q_c, p0=p0, q_bar=q_bar, q=q)


def require_admissible(spec, q):
    ce = critical_exponents(spec, q)
    if not ce.admissible:
        raise PreconditionError(
            f"q={q} is not above the critical exponent q_c={ce.q_c:g} ({CRITICAL_EXPONENT_REF})"
        )
    return ce


# ---------------------------------------------------------------------------
# delay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DelaySpec:
    """Delay functional with values in [0, r].

    ``kind="constant"`` returns ``tau0``.  ``kind="state-norm"`` returns
    ``r / (1 + c s)`` where ``s`` is the squared L^2 norm of the current
    state (``source="current"``) or its sup over the window
    (``source="window"``).
    """

    kind: str = "constant"
    r: float = 0.0
    tau0: float = 0.0
    c: float = 1.0
    source: str = "current"

    def __post_init__(self):
        if self.kind not in ("constant", "state-norm"):
            raise PreconditionError(f"unknown delay kind {self.kind!r}")
        if not (np.isfinite(self.r) and self.r >= 0):
            raise PreconditionError("delay bound r must be finite and >= 0")
        if self.kind == "constant" and not 0 <= self.tau0 <= self.r:
            raise PreconditionError(f"constant delay {self.tau0} outside [0, {self.r}]")
        if self.kind == "state-norm":
            if not self.c > 0:
                raise PreconditionError("state-norm delay needs c > 0")
            if self.source not in ("current", "window"):
                raise PreconditionError(f"unknown delay source {self.source!r}")


def eval_tau(delay, t, seg):
    """Realized delay tau(t, u_t); a value outside [0, r] is an internal error."""
    if delay.kind == "constant":
        tau = delay.tau0
    else:
        s = float(seg.sq_norms[-1]) if delay.source == "current" else seg.window_max_sq()
        tau = delay.r / (1.0 + delay.c * s)
    if not (0.0 <= tau <= delay.r):
        raise SpecViolation(f"delay {tau} at t={t} outside [0, {delay.r}]")
    return tau


def _c_l2_distance(seg1, seg2):
    t1, s1, _ = seg1.window()
    t2, s2, _ = seg2.window()
    times = np.union1d(t1, t2)
    best = 0.0
    for t in times:
        d = seg1.sample(t) - seg2.sample(t)
        best = max(best, seg1.sq_norm(d))
    return float(np.sqrt(best))


def estimate_tau_lipschitz(delay, histories, t=0.0):
    """Empirical Lipschitz constant of tau over all pairs of trial histories.

    Distances are sup-in-time L^2 distances over the window.  Identical
    pairs are skipped; if every pair is identical the estimate is undefined.
    """
    histories = list(histories)
    if len(histories) < 2:
        raise PreconditionError("need at least two trial histories")
    best = None
    for h1, h2 in combinations(histories, 2):
        dist = _c_l2_distance(h1, h2)
        if dist == 0.0:
            continue
        ratio = abs(eval_tau(delay, t, h1) - eval_tau(delay, t, h2)) / dist
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise PreconditionError("all trial histories coincide; Lipschitz ratio undefined")
    return best


# ---------------------------------------------------------------------------
# forcing and initial history
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForcingTerm:
    """One separable term d(t) * psi(x) of the forcing.

    ``shape`` is a callable of x or a dict ``{mode index: coefficient}``
    in the eigenbasis (mode index j in 1D, (m, n) in 2D).
    """

    coef: Callable
    shape: object
    bound: Optional[float] = None

    def shape_values(self, domain, x):
        if callable(self.shape):
            return np.asarray(self.shape(x), dtype=float)
        out = 0.0
        for idx, c in self.shape.items():
            out = out + c * eigenfunction(domain, idx)(x)
        return np.broadcast_to(out, np.shape(x)[:1]).astype(float)

    def shape_modal(self, basis):
        if callable(self.shape):
            return basis.proj @ np.asarray(self.shape(basis.quad_points), dtype=float)
        return modal_vector(self.shape, basis)


@dataclass(frozen=True, eq=False)
class ForcingSpec:
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def is_zero(self):
        return not self.terms

    def declared_bound(self):
        """sup_t sum_i |d_i(t)| from the declared bounds (None if undeclared)."""
        if any(term.bound is None for term in self.terms):
            return None
        return float(sum(term.bound for term in self.terms))


def constant(value):
    value = float(value)
    return lambda t: value


def mode_history(domain, modes):
    """Time-constant history sum_j c_j w_j(x); ``modes`` maps index -> c."""
    funcs = [(c, eigenfunction(domain, idx)) for idx, c in dict(modes).items()]

    def phi(theta, x):
        out = 0.0
        for c, w in funcs:
            out = out + c * w(x)
        return out

    phi.modes = dict(modes)
    return phi


def bump_profile(domain, center, width):
    """Compactly supported C^1 bump (1 - ((x - center)/width)^2)^2 in 1D."""
    if domain.d != 1:
        raise PreconditionError("bump histories are only defined in 1D")
    if not (width > 0 and width <= center <= domain.L - width):
        raise PreconditionError("bump must fit strictly inside the domain")

    def bump(x):
        z = (np.asarray(x, dtype=float) - center) / width
        return np.where(np.abs(z) < 1.0, (1.0 - z * z) ** 2, 0.0)

    return bump


def bump_history(domain, center, width, q, lq_norm=1.0):
    """Time-constant bump scaled so its L^q norm equals ``lq_norm`` exactly.

    The L^q norm of (1 - z^2)^2 over |z| < 1 is computed by Gauss-Legendre
    quadrature on the support, so the scale is independent of the solver grid.
    """
    bump = bump_profile(domain, center, width)
    z, w = np.polynomial.legendre.leggauss(200)
    raw = (width * np.sum(w * np.abs((1.0 - z * z) ** 2) ** q)) ** (1.0 / q)
    scale = lq_norm / raw

    def phi(theta, x):
        return scale * bump(x)

    phi.scale = scale
    return phi


# ---------------------------------------------------------------------------
# problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Complete problem: domain, reaction terms, delay, forcing, history.

    ``history(theta, x)`` returns the initial function at ``theta`` in
    [-r, 0] sampled at points ``x`` (array of shape (n,) or (n, 2)).
    ``q`` is the exponent used by L^q diagnostics and estimate checks.
    """

    domain: DomainSpec
    nonlinearity: NonlinearitySpec
    delay: DelaySpec
    history: Callable
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    q: Optional[float] = None
    name: str = ""

    @property
    def r(self):
        return self.delay.r

    def scaled(self, amplitude):
        """Same problem with the initial history multiplied by ``amplitude``."""
        phi = self.history

        def scaled_phi(theta, x):
            return amplitude * np.asarray(phi(theta, x), dtype=float)

        if getattr(phi, "modes", None) is not None:
            scaled_phi.modes = {j: amplitude * c for j, c in phi.modes.items()}

        return replace(self, history=scaled_phi, name=f"{self.name}*{amplitude:g}")
