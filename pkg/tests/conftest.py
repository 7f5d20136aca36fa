import numpy as np
import pytest

from seplearn.lti import Dims, NoiseSpec, QuadraticCostSpec, TimeVaryingLinearSystem
from seplearn.oracle.example import example_instance


@pytest.fixture
def example():
    """(model, plant, noise, cost) of the two-step example with cov(X0, W0) = -0.5."""
    return example_instance(-0.5)


@pytest.fixture
def example_plus():
    return example_instance(0.5)


def random_spd(rng, k, floor=0.1):
    G = rng.normal(size=(k, k))
    return G @ G.T + floor * np.eye(k)


def random_instance(rng, n=None, m=None, p=None, r=None, s=None, T=None, E_full=True):
    """Random time-varying system with a block-independent primitive law."""
    n = n or int(rng.integers(1, 5))
    m = m or int(rng.integers(1, 4))
    p = p or int(rng.integers(1, 4))
    r = r or int(rng.integers(1, 4))
    s = s or (p if E_full else int(rng.integers(1, 4)))
    T = T or int(rng.integers(1, 7))
    dims = Dims(n, m, p, r, s, T)
    sys = TimeVaryingLinearSystem(
        A=0.6 * rng.normal(size=(T, n, n)), B=rng.normal(size=(T, n, m)), D=rng.normal(size=(T, n, r)),
        C=rng.normal(size=(T + 1, p, n)), E=rng.normal(size=(T + 1, p, s)),
    )
    noise = NoiseSpec.independent(
        dims, rng.normal(size=n), random_spd(rng, n),
        [random_spd(rng, r) for _ in range(T)], [random_spd(rng, s) for _ in range(T + 1)],
        w_mean=rng.normal(size=(T, r)),
    )
    return sys, noise


def random_cost(rng, n, m, T, beta=1.0):
    return QuadraticCostSpec(np.stack([random_spd(rng, n, 0.0) for _ in range(T)]),
                             np.stack([random_spd(rng, m, 0.5) for _ in range(T)]),
                             random_spd(rng, n, 0.0), beta)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
