import numpy as np
import pytest

from infoplan.system import LinearGaussianSystem, SensingModel


def random_stable_system(rng, n=None, n_w=None, n_z=None, full_noise=False, noise=0.5):
    """Seeded stable LTI system with an SPD prior and a fixed sensor."""
    n = int(rng.integers(1, 7)) if n is None else n
    n_z = int(rng.integers(1, 4)) if n_z is None else n_z
    if full_noise:
        n_w = n
    elif n_w is None:
        n_w = int(rng.integers(1, n + 1))
    A = rng.standard_normal((n, n))
    A -= (np.abs(np.linalg.eigvals(A).real).max() + 0.1) * np.eye(n)
    B = np.eye(n) if full_noise else rng.standard_normal((n, n_w))
    G = rng.standard_normal((n, n))
    P0 = G @ G.T / n + 0.5 * np.eye(n)
    C = rng.standard_normal((n_z, n))
    S = rng.standard_normal((n_z, n_z))
    Sigma_N = S @ S.T / n_z + 0.5 * np.eye(n_z)
    return LinearGaussianSystem(A, B, noise * np.eye(B.shape[1]), P0), SensingModel(C, Sigma_N)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scalar_system():
    # dX = -X dt + dW, X_0 ~ N(0, 1)
    return LinearGaussianSystem([[-1.0]], [[1.0]], [[2.0]], [[1.0]])
