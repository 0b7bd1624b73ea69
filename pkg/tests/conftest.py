import numpy as np
import pytest

from adaptive_pinn._alloc import tune_allocator
from adaptive_pinn.net import MLP, init_mlp
from adaptive_pinn.pde import ProblemSpec

tune_allocator()


ACCEPTANCE_RESULTS = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_RESULTS[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def example1():
    return ProblemSpec(1e-4, 5.0, (-1.0,), (1.0,), 1.0, "example1")


@pytest.fixture
def example2():
    return ProblemSpec(1e-4, 4.0, (-1.0,), (1.0,), 1.0, "example2")


@pytest.fixture
def example3():
    return ProblemSpec(6.25e-3, 10.0, (0.0, 0.0), (1.0, 1.0), 10.0, "example3_circle",
                       {"epsilon": 0.025, "radius": 0.35, "center": [0.5, 0.5]},
                       slice_increment=1.0)


def random_mlp(sizes, seed, scale=0.5):
    """Glorot net with random (nonzero) biases so no derivative vanishes by symmetry."""
    m = init_mlp(sizes, seed)
    rng = np.random.default_rng(seed + 1000)
    return m.with_flat(m.flat() + scale * rng.standard_normal(m.n_params))


def affine_mlp(weight, bias=0.0):
    """Single-layer network u = weight . (x, t) + bias."""
    w = np.asarray(weight, dtype=float).reshape(1, -1)
    return MLP((w.shape[1], 1), (w,), (np.array([float(bias)]),))


def constant_mlp(value, sizes=(2, 4, 1)):
    """u == value everywhere, built from a tanh network with zero weights."""
    m = init_mlp(list(sizes), 0)
    weights = tuple(np.zeros_like(W) for W in m.weights)
    biases = tuple(np.zeros_like(b) for b in m.biases[:-1]) + (np.array([float(value)]),)
    return MLP(m.layer_sizes, weights, biases)


def tanh_profile_mlp(slope, center=0.0, spatial_dim=1):
    """u = tanh(slope * (x - center)) using one hidden unit."""
    W0 = np.zeros((1, spatial_dim + 1))
    W0[0, 0] = slope
    return MLP((spatial_dim + 1, 1, 1), (W0, np.ones((1, 1))),
               (np.array([-slope * center]), np.zeros(1)))
