"""Dirichlet Laplacian eigenbasis on intervals and rectangles.

Eigenpairs are closed-form: on (0, L) the modes are
``w_j(x) = sqrt(2/L) sin(j pi x / L)`` with ``mu_j = (j pi / L)**2``; on a
rectangle they are tensor products sorted by eigenvalue.  Nonlinear terms
are handled pseudo-spectrally on a Gauss-Legendre grid that integrates
products of the retained sines (and their cubes) to round-off.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels

_BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class DomainSpec:
    """Box domain (0, L) or (0, L) x (0, L2)."""

    d: int = 1
    L: float = np.pi
    L2: float = None

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.d == 2 and self.L2 is None:
            object.__setattr__(self, "L2", self.L)
        for length in self.lengths:
            if not (np.isfinite(length) and length > 0):
                raise ValueError(f"edge lengths must be positive, got {self.lengths}")

    @property
    def lengths(self):
        return (float(self.L),) if self.d == 1 else (float(self.L), float(self.L2))

    @property
    def volume(self):
        return float(np.prod(self.lengths))


def _gauss_legendre(length, n, panels=1):
    """Composite Gauss-Legendre rule on [0, length] with ``n`` nodes per panel."""
    x, w = np.polynomial.legendre.leggauss(n)
    edges = np.linspace(0.0, length, panels + 1)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _sines(j, x, length):
    return np.sqrt(2.0 / length) * np.sin(np.outer(j, x) * (np.pi / length))


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """First eigenpairs of the Dirichlet Laplacian plus quadrature data.

    ``k`` is the number of modes per axis; ``n_modes`` is ``k`` in 1D and
    ``k**2`` in 2D.  All arrays are read-only so a basis can be shared
    between concurrent runs.
    """

    domain: DomainSpec
    k: int
    eigenvalues: np.ndarray
    mode_indices: np.ndarray
    quad_points: np.ndarray
    quad_weights: np.ndarray
    synth: np.ndarray = field(repr=False)
    proj: np.ndarray = field(repr=False)
    dense_points: np.ndarray = field(repr=False)
    dense_synth: np.ndarray = field(repr=False)
    points_per_axis: int = 0
    dense_per_axis: int = 0

    @property
    def n_modes(self):
        return self.eigenvalues.shape[0]

    @property
    def mu1(self):
        return float(self.eigenvalues[0])

    def eval_modes(self, points):
        """Mode values at ``points``; shape (n_modes, n_points)."""
        pts = _check_points(points, self.domain)
        if self.domain.d == 1:
            return _sines(self.mode_indices[:, 0], pts, self.domain.L)
        L1, L2 = self.domain.lengths
        sx = _sines(np.arange(1, self.k + 1), pts[:, 0], L1)
        sy = _sines(np.arange(1, self.k + 1), pts[:, 1], L2)
        m = self.mode_indices
        return sx[m[:, 0] - 1] * sy[m[:, 1] - 1]

    def gram(self):
        return (self.synth * self.quad_weights) @ self.synth.T


def _check_points(points, domain):
    pts = np.asarray(points, dtype=float)
    if domain.d == 1:
        pts = pts.reshape(-1)
        lo, hi = pts.min(initial=0.0), pts.max(initial=0.0)
        if lo < -_BOUNDARY_TOL * domain.L or hi > domain.L * (1 + _BOUNDARY_TOL):
            raise ValueError("evaluation points outside the domain")
        return pts
    pts = pts.reshape(-1, 2)
    for axis, length in enumerate(domain.lengths):
        col = pts[:, axis]
        if col.size and (col.min() < -_BOUNDARY_TOL * length or col.max() > length * (1 + _BOUNDARY_TOL)):
            raise ValueError("evaluation points outside the domain")
    return pts


def eigenfunction(domain, index):
    """Callable x -> w_index(x); ``index`` is j (1D) or (m, n) (2D)."""
    if domain.d == 1:
        j = int(index[0] if np.ndim(index) else index)
        return lambda x: _sines([j], np.asarray(x, dtype=float).reshape(-1), domain.L)[0]
    m, n = (int(i) for i in index)
    L1, L2 = domain.lengths

    def w(x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return _sines([m], x[:, 0], L1)[0] * _sines([n], x[:, 1], L2)[0]

    return w


def quad_nodes_per_axis(k):
    # 4k + 32 Gauss points integrate w_j * u**3 exactly for u in span{w_1..w_k}.
    return 4 * k + 32


def dense_nodes_per_axis(k):
    return max(4 * k, 64) + 1


def build_basis(domain, k, panels=1):
    """Return the first ``k`` (per axis) Dirichlet eigenpairs of ``domain``."""
    if not isinstance(domain, DomainSpec):
        raise TypeError("domain must be a DomainSpec")
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    nq = quad_nodes_per_axis(k)
    if nq % panels:
        nq += panels - nq % panels
    nd = dense_nodes_per_axis(k)

    if domain.d == 1:
        L = domain.L
        j = np.arange(1, k + 1)
        # (pi/L)^2 j^2 keeps integer spectra exact when L = pi
        mu = (np.pi / L) ** 2 * (j * j)
        idx = j[:, None]
        x, w = _gauss_legendre(L, nq // panels, panels)
        dense = np.linspace(0.0, L, nd)
        synth = _sines(j, x, L)
        dense_synth = _sines(j, dense, L)
    else:
        L1, L2 = domain.lengths
        m, n = np.meshgrid(np.arange(1, k + 1), np.arange(1, k + 1), indexing="ij")
        m, n = m.ravel(), n.ravel()
        mu_all = (np.pi / L1) ** 2 * (m * m) + (np.pi / L2) ** 2 * (n * n)
        order = np.lexsort((n, m, mu_all))
        idx = np.stack([m[order], n[order]], axis=1)
        mu = mu_all[order]
        x1, w1 = _gauss_legendre(L1, nq // panels, panels)
        x2, w2 = _gauss_legendre(L2, nq // panels, panels)
        X, Y = np.meshgrid(x1, x2, indexing="ij")
        x = np.stack([X.ravel(), Y.ravel()], axis=1)
        w = np.outer(w1, w2).ravel()
        s1 = _sines(np.arange(1, k + 1), x1, L1)
        s2 = _sines(np.arange(1, k + 1), x2, L2)
        synth = (s1[idx[:, 0] - 1][:, :, None] * s2[idx[:, 1] - 1][:, None, :]).reshape(len(mu), -1)
        d1, d2 = np.linspace(0.0, L1, nd), np.linspace(0.0, L2, nd)
        DX, DY = np.meshgrid(d1, d2, indexing="ij")
        dense = np.stack([DX.ravel(), DY.ravel()], axis=1)
        t1 = _sines(np.arange(1, k + 1), d1, L1)
        t2 = _sines(np.arange(1, k + 1), d2, L2)
        dense_synth = (t1[idx[:, 0] - 1][:, :, None] * t2[idx[:, 1] - 1][:, None, :]).reshape(len(mu), -1)

    return EigenBasis(
        domain=domain,
        k=k,
        eigenvalues=_readonly(mu),
        mode_indices=np.asarray(idx, dtype=np.int64),
        quad_points=_readonly(x),
        quad_weights=_readonly(w),
        synth=_readonly(synth),
        proj=_readonly(synth * w),
        dense_points=_readonly(dense),
        dense_synth=_readonly(dense_synth),
        points_per_axis=nq,
        dense_per_axis=nd,
    )


def project(samples, basis):
    """Modal coefficients a_j = int u w_j dx from samples on the quadrature grid."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-1] != basis.quad_weights.shape[0]:
        raise ValueError(
            f"expected {basis.quad_weights.shape[0]} samples on the quadrature grid, "
            f"got {samples.shape[-1]}"
        )
    return samples @ basis.proj.T


def synthesize(state, basis, points=None):
    """Evaluate sum_j a_j w_j at ``points`` (default: the quadrature grid)."""
    a = _check_state(state, basis)
    modes = basis.synth if points is None else basis.eval_modes(points)
    return a @ modes


def _check_state(state, basis):
    a = np.asarray(state, dtype=float)
    if a.shape[-1] != basis.n_modes:
        raise ValueError(f"state has {a.shape[-1]} modes, basis has {basis.n_modes}")
    return a


def norm(state, basis, kind, q=None):
    """Spatial norm of a modal state.

    ``kind`` is one of ``"L2"``, ``"Lq"``, ``"V1"``, ``"V2"``, ``"Linf"``.
    Accepts a single state or a stack of states (last axis = modes).
    """
    a = _check_state(state, basis)
    kind = kind.upper()
    if kind == "LQ":
        if q is None:
            raise ValueError("Lq norm needs q")
        if q < 1:
            raise ValueError(f"q must be >= 1, got {q}")
        if q == 2:
            kind = "L2"
        elif not np.isfinite(q):
            kind = "LINF"
    if kind == "L2":
        return np.sqrt(np.sum(a * a, axis=-1))
    if kind == "V1":
        return np.sqrt(np.sum(basis.eigenvalues * a * a, axis=-1))
    if kind == "V2":
        return np.sqrt(np.sum(basis.eigenvalues ** 2 * a * a, axis=-1))
    if kind == "LINF":
        return np.max(np.abs(a @ basis.dense_synth), axis=-1)
    if kind == "LQ":
        vals = np.atleast_2d(a) @ basis.synth
        out = kernels.lq_norms(np.ascontiguousarray(vals), basis.quad_weights, float(q))
        return out if a.ndim > 1 else float(out[0])
    raise ValueError(f"unknown norm kind {kind!r}")


def grid_lq_norm(values, basis, q):
    """L^q norm (q >= 1, finite) of raw samples on the quadrature grid."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    vals = np.atleast_2d(np.asarray(values, dtype=float))
    return kernels.lq_norms(np.ascontiguousarray(vals), basis.quad_weights, float(q))


def modal_vector(modes, basis):
    """Coefficient vector of sum_j c_j w_j; modes beyond the basis are dropped."""
    lookup = {tuple(m): i for i, m in enumerate(basis.mode_indices.tolist())}
    out = np.zeros(basis.n_modes)
    for key, c in modes.items():
        i = lookup.get(tuple(np.atleast_1d(key).tolist()))
        if i is not None:
            out[i] += float(c)
    return out
