"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The active backend is chosen once at import time from the environment
variable ``SDD_GALERKIN_BACKEND`` (``numba`` or ``numpy``).  When the
variable is unset numba is used if it can be imported.  Both
implementations stay importable as ``numba_impl`` / ``numpy_impl`` so
tests and the benchmark can compare them side by side.

Kernel signatures (all arrays float64, C-contiguous):

``poly1(coef, u)``
    sum_i coef[i] * u**i  (Horner).
``poly2(coef, u, v)``
    sum_ij coef[i, j] * u**i * v**j.
``interp_row(times, states, s)``
    linear interpolation of ``states`` (rows) at time ``s``.
``lq_norms(values, weights, q)``
    (sum_i w_i |values[n, i]|**q)**(1/q) per row.
``modal_nonlinear(a, ad, synth, proj, fcoef, gcoef)``
    pseudo-spectral projection of f(u) + g(u, v) with u = a @ synth,
    v = ad @ synth.
``tridiag_solve(sub, diag, sup, rhs)``
    solve a tridiagonal system.
"""

import os
import types

import numpy as np
from scipy.linalg import solve_banded

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

BACKEND_ENV = "SDD_GALERKIN_BACKEND"


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def _poly1_np(coef, u):
    out = np.full_like(u, coef[-1])
    for c in coef[-2::-1]:
        out = out * u + c
    return out


def _poly2_np(coef, u, v):
    out = np.zeros_like(u)
    for i in range(coef.shape[0] - 1, -1, -1):
        out = out * u + _poly1_np(coef[i], v)
    return out


def _interp_row_np(times, states, s):
    i = int(np.searchsorted(times, s, side="right")) - 1
    if i >= len(times) - 1:
        return states[-1].copy()
    if s == times[i]:
        return states[i].copy()
    w = (s - times[i]) / (times[i + 1] - times[i])
    return states[i] + w * (states[i + 1] - states[i])


def _lq_norms_np(values, weights, q):
    return (np.abs(values) ** q @ weights) ** (1.0 / q)


def _modal_nonlinear_np(a, ad, synth, proj, fcoef, gcoef):
    u = a @ synth
    v = ad @ synth
    return proj @ (_poly1_np(fcoef, u) + _poly2_np(gcoef, u, v))


def _tridiag_solve_np(sub, diag, sup, rhs):
    n = diag.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = sup
    ab[1] = diag
    ab[2, :-1] = sub
    return solve_banded((1, 1), ab, rhs)


numpy_impl = types.SimpleNamespace(
    name="numpy",
    poly1=_poly1_np,
    poly2=_poly2_np,
    interp_row=_interp_row_np,
    lq_norms=_lq_norms_np,
    modal_nonlinear=_modal_nonlinear_np,
    tridiag_solve=_tridiag_solve_np,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_impl():
    from . import _numba_kernels as nk

    return types.SimpleNamespace(
        name="numba",
        poly1=nk.poly1,
        poly2=nk.poly2,
        interp_row=nk.interp_row,
        lq_norms=nk.lq_norms,
        modal_nonlinear=nk.modal_nonlinear,
        tridiag_solve=nk.tridiag_solve,
    )


numba_impl = _build_numba_impl() if numba is not None else None


def _select():
    requested = os.environ.get(BACKEND_ENV, "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy" or numba_impl is None:
        return numpy_impl
    return numba_impl


active = _select()
BACKEND = active.name

poly1 = active.poly1
poly2 = active.poly2
interp_row = active.interp_row
lq_norms = active.lq_norms
modal_nonlinear = active.modal_nonlinear
tridiag_solve = active.tridiag_solve
