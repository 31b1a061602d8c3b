"""Finite-difference method-of-lines oracle (1D only).

Second-order central differences in space; in time, backward Euler for
diffusion with the reaction, delay and forcing terms explicit:

    (I + dt A) u^{n+1} = u^n + dt F(t_n, u^n, u(t_n - tau)),

with A the Dirichlet -d^2/dx^2 stencil.  Shares nothing with the spectral
solver except the history buffer and the delay functional.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .basis import synthesize
from .errors import PreconditionError
from .history import HistorySegment
from .model import _apply_f, _apply_g, eval_tau
from .solver import BLOWUP_THRESHOLD, history_nodes, write_csv


@dataclass(eq=False)
class GridTrajectory:
    """Interior node values on x_i = i L / N, i = 1..N-1."""

    spec: object
    N: int
    dt: float
    x: np.ndarray
    times: np.ndarray
    states: np.ndarray
    taus: np.ndarray
    n_history: int
    status: str = "completed"
    blowup_time: Optional[float] = None

    @property
    def h(self):
        return self.spec.domain.L / self.N

    @property
    def completed(self):
        return self.status == "completed"

    def state_at(self, t):
        i = int(round(t / self.dt)) + self.n_history - 1
        if not (0 <= i < len(self.times)) or abs(self.times[i] - t) > 1e-9:
            raise PreconditionError(f"t={t} is not a recorded step time")
        return self.states[i]

    def discrete_l2(self, u):
        return np.sqrt(self.h * np.sum(np.asarray(u) ** 2, axis=-1))

    def norm_columns(self, q=None):
        q = q if q is not None else (self.spec.q or 2.0)
        h = self.h
        u = self.states
        padded = np.pad(u, ((0, 0), (1, 1)))
        grad = np.diff(padded, axis=1) / h
        lap = (padded[:, 2:] - 2 * padded[:, 1:-1] + padded[:, :-2]) / h ** 2
        return {
            "t": self.times,
            "tau": self.taus,
            "l2": self.discrete_l2(u),
            "lq": (h * np.sum(np.abs(u) ** q, axis=1)) ** (1.0 / q),
            "h1": np.sqrt(h * np.sum(grad ** 2, axis=1)),
            "v2": np.sqrt(h * np.sum(lap ** 2, axis=1)),
            "linf": np.max(np.abs(u), axis=1),
        }

    def to_csv(self, path, q=None):
        write_csv(path, self.norm_columns(q))


def fdm_solve(spec, N, dt, T):
    """Integrate the problem on a uniform grid with N intervals."""
    if spec.domain.d != 1:
        raise PreconditionError("the finite-difference oracle is 1D only")
    N = int(N)
    if N < 16:
        raise PreconditionError("N must be at least 16")
    if not (dt > 0 and T > 0):
        raise PreconditionError("dt and T must be positive")
    r = spec.delay.r
    if r > 0 and dt > r / 8:
        raise PreconditionError(f"dt={dt} must not exceed r/8={r / 8:g}")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise PreconditionError("T must be an integer multiple of dt")

    L = spec.domain.L
    h = L / N
    x = np.arange(1, N) * h
    m = N - 1
    off = np.full(m - 1, -dt / h ** 2)
    diag = np.full(m, 1.0 + 2.0 * dt / h ** 2)

    def sq_norm(u):
        return h * float(np.dot(u, u))

    thetas = history_nodes(r, dt)
    hist = np.array([np.broadcast_to(np.asarray(spec.history(float(th), x), dtype=float), (m,))
                     for th in thetas])
    seg = HistorySegment.from_samples(r, thetas, hist, sq_norm=sq_norm)

    nl = spec.nonlinearity
    terms = spec.forcing.terms
    shapes = np.array([term.shape_values(spec.domain, x) for term in terms]).reshape(len(terms), m)

    n_hist = len(thetas)
    total = n_hist + n_steps
    times = np.empty(total)
    states = np.empty((total, m))
    taus = np.full(total, np.nan)
    times[:n_hist] = thetas
    states[:n_hist] = hist

    u = hist[-1].copy()
    pos = n_hist - 1
    status, blowup_time = "completed", None
    with np.errstate(all="ignore"):
        for n in range(n_steps):
            t = n * dt
            tau = eval_tau(spec.delay, t, seg)
            taus[pos] = tau
            v = seg.sample(t - tau)
            F = _apply_f(nl.f, u) + _apply_g(nl.g, u, v)
            if terms:
                F = F + np.array([float(term.coef(t)) for term in terms]) @ shapes
            u = kernels.tridiag_solve(off, diag, off, u + dt * F)
            if not (np.all(np.isfinite(u)) and np.max(np.abs(u)) <= BLOWUP_THRESHOLD):
                status, blowup_time = "blowup-suspected", (n + 1) * dt
                break
            pos += 1
            times[pos] = (n + 1) * dt
            states[pos] = u
            seg.push((n + 1) * dt, u)
        else:
            taus[pos] = eval_tau(spec.delay, n_steps * dt, seg)

    return GridTrajectory(
        spec=spec, N=N, dt=dt, x=x,
        times=times[:pos + 1], states=states[:pos + 1], taus=taus[:pos + 1],
        n_history=n_hist, status=status, blowup_time=blowup_time,
    )


@dataclass
class ComparisonTable:
    times: list
    relative_l2: list

    @property
    def max_error(self):
        return max(self.relative_l2)


def compare(spectral, grid, times):
    """Relative discrete L^2 difference of the spectral solution on the FD grid."""
    if spectral.spec is not grid.spec:
        raise PreconditionError("problem mismatch: trajectories solve different problems")
    errs = []
    for t in times:
        ug = grid.state_at(t)
        us = synthesize(spectral.state_at(t), spectral.basis, grid.x)
        ref = grid.discrete_l2(ug)
        diff = grid.discrete_l2(us - ug)
        errs.append(float(diff / ref) if ref > 0 else float(diff))
    return ComparisonTable(times=list(times), relative_l2=errs)
