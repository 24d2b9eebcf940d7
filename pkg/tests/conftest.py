import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("arbspec", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("arbspec")


def psd_matrix(rng, dim, rank):
    """Random PSD matrix of the given rank with a spread of eigenvalues."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    w = np.zeros(dim)
    w[:rank] = 10.0 ** rng.uniform(-3, 3, rank)
    return (q * w) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _norm(x):
    return float(np.linalg.norm(x, 2)) if x.size else 0.0


def penrose_residuals(c, p):
    """Normwise relative residuals of the four Penrose conditions.

    Each residual is divided by the norms of the factors that form it, so
    an exactly rounded pseudoinverse scores O(eps) at any conditioning.
    """
    nc, np_ = _norm(c), _norm(p)
    if nc == 0:
        return np.array([0.0, _norm(p), 0.0, 0.0])
    cp, pc = c @ p, p @ c
    return np.array([_norm(cp @ c - c) / (nc * nc * np_), _norm(pc @ p - p) / (np_ * np_ * nc),
                     _norm(cp.T - cp) / (nc * np_), _norm(pc.T - pc) / (nc * np_)])


def kernel_residuals(a, c, lam, nu, p):
    """Normwise relative residuals of ``a = c lam + nu`` and ``c nu = 0``."""
    na, nc = np.linalg.norm(a), _norm(c)
    r1 = np.linalg.norm(a - c @ lam - nu) / max(na, np.finfo(float).tiny)
    r2 = 0.0 if nc == 0 else np.linalg.norm(c @ nu) / (nc * nc * _norm(p) * max(na, np.finfo(float).tiny))
    return r1, r2
