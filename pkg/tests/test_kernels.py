import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdd_galerkin import kernels
from sdd_galerkin.basis import DomainSpec, build_basis

IMPLS = [kernels.numpy_impl, kernels.numba_impl]
RNG = np.random.default_rng(7)


@pytest.fixture(params=IMPLS, ids=lambda impl: impl.name)
def impl(request):
    return request.param


def test_poly1_horner(impl):
    u = np.array([-2.0, 0.0, 1.5])
    out = impl.poly1(np.array([1.0, -1.0, 0.0, 2.0]), u)
    assert np.allclose(out, 1 - u + 2 * u ** 3, rtol=1e-15)


def test_poly2_matches_polyval2d(impl):
    c = RNG.normal(size=(3, 4))
    u, v = RNG.normal(size=50), RNG.normal(size=50)
    assert np.allclose(impl.poly2(c, u, v), np.polynomial.polynomial.polyval2d(u, v, c),
                       rtol=1e-13, atol=1e-13)


def test_interp_row(impl):
    times = np.array([0.0, 0.1, 0.3])
    states = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]])
    assert np.allclose(impl.interp_row(times, states, 0.05), [2.0, 3.0])
    assert np.array_equal(impl.interp_row(times, states, 0.1), [3.0, 4.0])
    assert np.array_equal(impl.interp_row(times, states, 0.3), [5.0, 0.0])
    assert np.allclose(impl.interp_row(times, states, 0.2), [4.0, 2.0])


def test_lq_norms(impl):
    w = np.full(4, 0.25)
    vals = np.array([[1.0, -1.0, 1.0, -1.0], [2.0, 0.0, 0.0, 0.0]])
    assert np.allclose(impl.lq_norms(vals, w, 3.0), [1.0, 2.0 * 0.25 ** (1 / 3)])


def test_tridiag_solve_against_dense(impl):
    n = 40
    sub, sup = RNG.uniform(-1, 0, n - 1), RNG.uniform(-1, 0, n - 1)
    diag = 3.0 + RNG.uniform(0, 1, n)
    rhs = RNG.normal(size=n)
    dense = np.diag(diag) + np.diag(sub, -1) + np.diag(sup, 1)
    assert np.allclose(impl.tridiag_solve(sub, diag, sup, rhs), np.linalg.solve(dense, rhs),
                       rtol=1e-12, atol=1e-13)


def test_modal_nonlinear_backends_agree():
    b = build_basis(DomainSpec(d=1, L=np.pi), 12)
    synth = np.ascontiguousarray(b.synth)
    proj = np.ascontiguousarray(b.proj)
    f = np.array([0.0, 0.5, 0.0, -1.0])
    g = np.array([[0.0, 0.1], [0.2, 0.0]])
    a, ad = RNG.normal(size=12), RNG.normal(size=12)
    ref = kernels.numpy_impl.modal_nonlinear(a, ad, synth, proj, f, g)
    got = kernels.numba_impl.modal_nonlinear(a, ad, synth, proj, f, g)
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=6),
       st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=30))
def test_poly1_backends_agree(coef, u):
    c, x = np.array(coef), np.array(u)
    a = kernels.numpy_impl.poly1(c, x)
    b = kernels.numba_impl.poly1(c, x)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_backend_selected_from_environment(backend):
    env = dict(os.environ, SDD_GALERKIN_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c",
                          "from sdd_galerkin import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == backend


def test_unknown_backend_rejected():
    env = dict(os.environ, SDD_GALERKIN_BACKEND="fortran")
    out = subprocess.run([sys.executable, "-c", "import sdd_galerkin.kernels"],
                         env=env, capture_output=True, text=True)
    assert out.returncode != 0
    assert "SDD_GALERKIN_BACKEND" in out.stderr


def test_solver_results_agree_across_backends(tmp_path):
    code = (
        "import sys, numpy as np; sys.path.insert(0, 'tests');"
        "from conftest import dissipative_problem;"
        "from sdd_galerkin.solver import SolverConfig, solve;"
        "t = solve(dissipative_problem(), SolverConfig(k=16, dt=1e-3, T=0.5));"
        "np.save(sys.argv[1], t.states)"
    )
    results = {}
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    for backend in ("numpy", "numba"):
        path = str(tmp_path / f"states_{backend}.npy")
        env = dict(os.environ, SDD_GALERKIN_BACKEND=backend)
        subprocess.run([sys.executable, "-c", code, path], env=env, cwd=root, check=True)
        results[backend] = np.load(path)
    assert np.allclose(results["numpy"], results["numba"], rtol=1e-10, atol=1e-12)
