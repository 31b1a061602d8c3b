"""Time-stamped history buffer realizing u_t(theta) = u(t + theta)."""

import numpy as np

from . import kernels
from .errors import OutOfWindowError, PreconditionError

# Relative tolerance for queries that land a rounding error outside the span.
_SPAN_TOL = 1e-12


def _sum_sq(a):
    return float(np.dot(a, a))


class HistorySegment:
    """Ordered samples (t_i, state_i) covering the delay window [t - r, t].

    States are any fixed-length float vectors (modal coefficients for the
    spectral solver, grid values for the finite-difference oracle).  The
    squared L^2 norm of every sample is cached at push time via
    ``sq_norm`` so delay functionals can read window norms cheaply.

    With ``evict=True`` samples older than ``t_latest - r`` are dropped,
    except for the newest of them, so a query at exactly ``t - r`` never
    extrapolates.
    """

    def __init__(self, r, dim, sq_norm=_sum_sq, evict=True, capacity=64):
        if r < 0:
            raise PreconditionError(f"window length r must be >= 0, got {r}")
        self.r = float(r)
        self.dim = int(dim)
        self.sq_norm = sq_norm
        self.evict = evict
        self._times = np.empty(capacity)
        self._states = np.empty((capacity, self.dim))
        self._sq = np.empty(capacity)
        self._lo = 0
        self._hi = 0

    # -- inspection ---------------------------------------------------------
    def __len__(self):
        return self._hi - self._lo

    @property
    def times(self):
        return self._times[self._lo:self._hi]

    @property
    def states(self):
        return self._states[self._lo:self._hi]

    @property
    def sq_norms(self):
        return self._sq[self._lo:self._hi]

    @property
    def latest_time(self):
        if not len(self):
            raise OutOfWindowError("history is empty")
        return float(self._times[self._hi - 1])

    @property
    def earliest_time(self):
        if not len(self):
            raise OutOfWindowError("history is empty")
        return float(self._times[self._lo])

    def latest(self):
        return self._states[self._hi - 1]

    # -- mutation -----------------------------------------------------------
    def push(self, t, state):
        state = np.asarray(state, dtype=float)
        if state.shape != (self.dim,):
            raise PreconditionError(f"state must have shape ({self.dim},), got {state.shape}")
        if len(self) and not t > self._times[self._hi - 1]:
            raise PreconditionError(
                f"non-monotone time: {t} after {self._times[self._hi - 1]}"
            )
        if self._hi == self._times.shape[0]:
            self._grow()
        self._times[self._hi] = t
        self._states[self._hi] = state
        self._sq[self._hi] = self.sq_norm(state)
        self._hi += 1
        if self.evict:
            self._evict(t)
        return self

    def _evict(self, t):
        cutoff = t - self.r
        # index of the newest sample at or before the cutoff stays
        i = int(np.searchsorted(self._times[self._lo:self._hi], cutoff, side="right")) - 1
        if i > 0:
            self._lo += i

    def _grow(self):
        n = len(self)
        cap = max(2 * n, 64)
        times = np.empty(cap)
        states = np.empty((cap, self.dim))
        sq = np.empty(cap)
        times[:n] = self.times
        states[:n] = self.states
        sq[:n] = self.sq_norms
        self._times, self._states, self._sq = times, states, sq
        self._lo, self._hi = 0, n

    @classmethod
    def from_samples(cls, r, times, states, sq_norm=_sum_sq, evict=True):
        states = np.asarray(states, dtype=float)
        seg = cls(r, states.shape[1], sq_norm=sq_norm, evict=evict,
                  capacity=max(64, 2 * len(times)))
        for t, a in zip(times, states):
            seg.push(float(t), a)
        return seg

    # -- queries ------------------------------------------------------------
    def _clip(self, s):
        lo, hi = self.earliest_time, self.latest_time
        tol = _SPAN_TOL * max(1.0, abs(lo), abs(hi))
        if s < lo:
            if lo - s <= tol:
                return lo
            raise OutOfWindowError(f"time {s} precedes stored history starting at {lo}")
        if s > hi:
            if s - hi <= tol:
                return hi
            raise OutOfWindowError(f"time {s} is after the latest stored time {hi}")
        return s

    def sample(self, s):
        """State at time ``s``; stored nodes are returned exactly."""
        s = self._clip(float(s))
        return kernels.interp_row(self.times, self.states, s)

    def window(self):
        """(times, states, sq_norms) on [t_latest - r, t_latest].

        The left end is interpolated when it falls between nodes.
        """
        t = self.latest_time
        left = self._clip(t - self.r)
        times, states, sq = self.times, self.states, self.sq_norms
        i = int(np.searchsorted(times, left, side="left"))
        if times[i] == left:
            return times[i:], states[i:], sq[i:]
        a = kernels.interp_row(times, states, left)
        return (
            np.concatenate([[left], times[i:]]),
            np.vstack([a, states[i:]]),
            np.concatenate([[self.sq_norm(a)], sq[i:]]),
        )

    def window_max_sq(self):
        """max over the window of the cached squared L^2 norm."""
        if self.r == 0.0:
            return float(self._sq[self._hi - 1])
        return float(np.max(self.window()[2]))

    def window_norm(self, kind, basis=None, q=None):
        """Sup over [t - r, t] of a spatial norm of the stored states.

        ``kind`` is ``"C_L2"``, ``"C_V1"``, ``"Linf_Lq"`` or ``"Linf_Linf"``.
        Norms are convex, so the sup of the piecewise-linear history is
        attained at nodes or at the interpolated left end.  With r = 0
        this is the norm of the latest state.
        """
        from .basis import norm

        if self.r == 0.0:
            states = self.states[-1:]
        else:
            states = self.window()[1]
        kind_u = kind.upper()
        if kind_u == "C_L2":
            if basis is None:
                return float(np.sqrt(max(self.sq_norm(a) for a in states)))
            return float(np.max(norm(states, basis, "L2")))
        if basis is None:
            raise PreconditionError(f"window norm {kind} needs a basis")
        if kind_u == "C_V1":
            vals = norm(states, basis, "V1")
        elif kind_u == "LINF_LQ":
            vals = norm(states, basis, "Lq", q=q)
        elif kind_u == "LINF_LINF":
            vals = norm(states, basis, "Linf")
        else:
            raise ValueError(f"unknown window norm {kind!r}")
        return float(np.max(vals))
