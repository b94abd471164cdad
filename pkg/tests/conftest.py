import numpy as np
import pytest


class QuadraticObjective:
    """0.5 x^T A x - b^T x with SPD A; closed-form minimizer A^-1 b."""

    family = "quadratic"

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.param_dim = len(self.b)

    def value(self, x):
        return float(0.5 * x @ self.a @ x - self.b @ x)

    def gradient(self, x):
        return self.a @ x - self.b

    def hessian(self, x):
        return self.a.copy()

    def minimizer(self):
        return np.linalg.solve(self.a, self.b)


def random_spd_quadratic(rng, dim, eig_low=0.5, eig_high=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigs = rng.uniform(eig_low, eig_high, size=dim)
    a = (q * eigs) @ q.T
    b = rng.standard_normal(dim)
    return QuadraticObjective(a, b)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
