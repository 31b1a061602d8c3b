import numpy as np
import pytest

from sdd_galerkin.basis import DomainSpec
from sdd_galerkin.model import (
    DelaySpec,
    ForcingSpec,
    ForcingTerm,
    NonlinearitySpec,
    ProblemSpec,
    mode_history,
)

PI = DomainSpec(d=1, L=np.pi)


def heat_problem(amplitude=1.0, r=0.5, q=8.0):
    nl = NonlinearitySpec(f=np.zeros(1), g=np.zeros((1, 1)), p=1, beta=1, beta0=3)
    return ProblemSpec(PI, nl, DelaySpec("constant", r=r, tau0=r),
                       mode_history(PI, {1: amplitude}), q=q, name="heat")


def dissipative_problem(amplitude=2.0, forcing=None, q=8.0, eps=0.1):
    f = np.array([0.0, 0.0, 0.0, -1.0])
    g = np.array([[0.0, eps]])
    nl = NonlinearitySpec(f=f, g=g, p=3, beta=1, a0=1, b0=max(eps, 1e-12), beta0=3,
                          Lambda=1, N=0)
    terms = ()
    if forcing:
        terms = (ForcingTerm(lambda t, c=forcing: c, {1: 1.0}, abs(forcing)),)
    return ProblemSpec(PI, nl, DelaySpec("state-norm", r=0.5, tau0=0.1, c=1.0),
                       mode_history(PI, {1: amplitude}), ForcingSpec(terms), q=q,
                       name="dissipative")


def manufactured_problem(shape=np.exp):
    """u*(t,x) = e^{-t} sin x with f = -u^3, g = v, tau = 1."""
    nl = NonlinearitySpec(f=np.array([0.0, 0.0, 0.0, -1.0]), g=np.array([[0.0, 1.0]]),
                          p=3, beta=1, beta0=3)
    terms = (
        ForcingTerm(lambda t: np.exp(-3.0 * t), lambda x: np.sin(x) ** 3, 1.0),
        ForcingTerm(lambda t: -np.exp(-(t - 1.0)), np.sin, np.e),
    )
    return ProblemSpec(PI, nl, DelaySpec("constant", r=1.0, tau0=1.0),
                       lambda th, x: np.exp(-th) * np.sin(x), ForcingSpec(terms), q=8.0,
                       name="manufactured")


def manufactured_exact(t, x):
    return np.exp(-t) * np.sin(x)


@pytest.fixture
def heat():
    return heat_problem()


@pytest.fixture
def dissipative():
    return dissipative_problem()


# criterion number -> "criterion N: PASS|FAIL  detail", filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
