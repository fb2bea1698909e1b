import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sbmrecon.model import ModelSpec, analyze, perturbation_family  # noqa: E402


def zero_row_sum(pi, A, assortative=True):
    """``M = D_pi^{-1} (diag(A 1) - A)`` for symmetric ``A``: zero rows, ``D_pi M`` symmetric.

    With ``assortative=False`` the sign is flipped.
    """
    A = 0.5 * (A + A.T)
    S = np.diag(A.sum(axis=1)) - A
    return (S if assortative else -S) / np.asarray(pi)[:, None]


def scale_limit(pi, M):
    """Largest ``s`` with every entry of ``1 pi^T + s M`` inside ``(0, 1)``."""
    base = np.ones((len(pi), 1)) * np.asarray(pi)[None, :]
    lim = np.inf
    neg, pos = M < 0, M > 0
    if neg.any():
        lim = min(lim, np.min(base[neg] / -M[neg]))
    if pos.any():
        lim = min(lim, np.min((1 - base[pos]) / M[pos]))
    return lim


def random_perturbation_model(rng, q, d=None):
    pi = rng.dirichlet(np.full(q, 3.0))
    pi = np.maximum(pi, 0.05)
    pi /= pi.sum()
    M = zero_row_sum(pi, rng.random((q, q)), assortative=bool(rng.random() < 0.8))
    scale = rng.uniform(0.1, 0.9) * scale_limit(pi, M)
    d = rng.uniform(2, 20) if d is None else d
    spec, _ = perturbation_family(pi, M, scale, d)
    return analyze(spec)


def random_reversible_model(rng, q):
    """Metropolis chain on a random symmetric proposal, so ``P`` is ``pi``-reversible."""
    pi = rng.dirichlet(np.full(q, 2.0))
    pi = np.maximum(pi, 0.03)
    pi /= pi.sum()
    K = rng.random((q, q))
    K = 0.5 * (K + K.T)
    K /= K.sum(axis=1).max() * 1.01
    P = K * np.minimum(1.0, pi[None, :] / pi[:, None])
    np.fill_diagonal(P, 0.0)
    np.fill_diagonal(P, 1.0 - P.sum(axis=1))
    d = rng.uniform(1, 15)
    Q = d * P / pi[None, :]
    Q = 0.5 * (Q + Q.T)
    return analyze(ModelSpec(pi=pi, Q_scaled=Q))


def model_grid(n_each=20, seed=2024):
    """Symmetric, perturbation-family and random reversible models."""
    rng = np.random.default_rng(seed)
    models = []
    for q in (2, 3, 4, 5):
        for a, b in ((16, 4), (5, 1), (3, 3.5), (2, 9), (10, 0.5)):
            models.append(("symmetric", analyze(ModelSpec.symmetric(q, a, b))))
    for _ in range(n_each):
        models.append(("perturbation", random_perturbation_model(rng, int(rng.integers(2, 6)))))
    for _ in range(n_each):
        models.append(("reversible", random_reversible_model(rng, int(rng.integers(2, 6)))))
    return models


@pytest.fixture(scope="session")
def sym2():
    """q=2, pi uniform, P = [[2/3, 1/3], [1/3, 2/3]], d = 3."""
    return analyze(ModelSpec.symmetric(2, 4, 2))


@pytest.fixture(scope="session")
def asym3():
    pi = np.array([0.5, 0.3, 0.2])
    M = zero_row_sum(pi, np.array([[0, 1.0, 0.4], [1.0, 0, 0.7], [0.4, 0.7, 0]]))
    spec, _ = perturbation_family(pi, M, 0.07, 5.0)
    return analyze(spec)
