"""Block-model parameters, the derived broadcast transition matrix and its spectrum.

Conventions
-----------
Communities are labelled ``0 .. q-1``.  ``Q_scaled`` holds edge intensities at
degree scale, i.e. ``Q_scaled[i, j] = n * Pr(edge | i, j)``, so every quantity
below is order one and independent of ``n``.

Eigenvectors are returned as the *columns* of ``Spectrum.eigenvectors``:
``xi[:, l]`` is the right eigenvector of ``P`` for ``eigenvalues[l]``, scaled
so that ``sum_j pi_j xi[j, l] ** 2 == 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DegreeNotUniform,
    EntriesOutOfRange,
    NonSymmetricQ,
    NotReversible,
    SingularNoise,
)

PROB_TOL = 1e-12
SYM_TOL = 1e-12
DEGREE_RTOL = 1e-9
DET_FLOOR = 1e-9


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelSpec:
    """Community prior ``pi`` and degree-scale edge intensities ``Q_scaled``."""

    pi: np.ndarray
    Q_scaled: np.ndarray
    n: int = 10_000

    def __post_init__(self):
        pi = _readonly(self.pi)
        Q = _readonly(self.Q_scaled)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "Q_scaled", Q)
        q = pi.shape[0]
        if pi.ndim != 1 or q < 2:
            raise ValueError("pi must be a vector with at least two entries")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > PROB_TOL:
            raise ValueError("pi must be strictly positive and sum to 1")
        if Q.shape != (q, q):
            raise ValueError(f"Q_scaled must be {q}x{q}, got {Q.shape}")
        if np.any(Q < 0):
            raise ValueError("Q_scaled entries must be nonnegative")
        if np.max(np.abs(Q - Q.T)) > SYM_TOL * max(1.0, float(np.abs(Q).max())):
            raise NonSymmetricQ("Q_scaled is not symmetric")
        if int(self.n) < 1:
            raise ValueError("n must be a positive integer")
        object.__setattr__(self, "n", int(self.n))

    @property
    def q(self):
        return self.pi.shape[0]

    def to_dict(self):
        return {
            "q": self.q,
            "pi": [float(x) for x in self.pi],
            "Q_scaled": [[float(x) for x in row] for row in self.Q_scaled],
            "n": self.n,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc):
        spec = cls(pi=doc["pi"], Q_scaled=doc["Q_scaled"], n=doc.get("n", 10_000))
        if "q" in doc and int(doc["q"]) != spec.q:
            raise ValueError(f"q={doc['q']} does not match len(pi)={spec.q}")
        return spec

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def symmetric(cls, q, a, b, n=10_000):
        """Planted partition: intensity ``a`` inside, ``b`` across, uniform prior."""
        Q = np.full((q, q), float(b))
        np.fill_diagonal(Q, float(a))
        return cls(pi=np.full(q, 1.0 / q), Q_scaled=Q, n=n)


@dataclass(frozen=True)
class TransitionSpec:
    """Broadcast transition matrix ``P`` and the average degree ``d``."""

    P: np.ndarray
    d: float
    d_pi: float

    def __post_init__(self):
        object.__setattr__(self, "P", _readonly(self.P))

    @property
    def q(self):
        return self.P.shape[0]


@dataclass(frozen=True)
class NoiseMatrix:
    """Row-stochastic confusion matrix, ``Delta[i, j] = Pr(tau = j | sigma = i)``."""

    Delta: np.ndarray

    def __post_init__(self):
        D = _readonly(self.Delta)
        object.__setattr__(self, "Delta", D)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise ValueError("noise matrix must be square")
        if np.any(D < -PROB_TOL) or np.any(D > 1 + PROB_TOL):
            raise ValueError("noise matrix entries must lie in [0, 1]")
        if np.max(np.abs(D.sum(axis=1) - 1.0)) > PROB_TOL:
            raise ValueError("noise matrix rows must sum to 1")

    @property
    def q(self):
        return self.Delta.shape[0]

    @property
    def det(self):
        return float(np.linalg.det(self.Delta))

    @property
    def invertible(self):
        return abs(self.det) > DET_FLOOR

    def inverse_transpose(self):
        """``(Delta^T)^{-1}``, the map taking eigenvector weights to noisy weights."""
        if not self.invertible:
            raise SingularNoise(f"|det Delta| = {abs(self.det):.3g} <= {DET_FLOOR}")
        return np.linalg.inv(self.Delta.T)

    @classmethod
    def identity(cls, q):
        return cls(np.eye(q))

    @classmethod
    def uniform_mix(cls, q, keep):
        """``keep * I + (1 - keep) / q * 11^T``."""
        return cls(keep * np.eye(q) + (1.0 - keep) / q * np.ones((q, q)))


def as_noise(delta):
    if delta is None or isinstance(delta, NoiseMatrix):
        return delta
    return NoiseMatrix(np.asarray(delta, dtype=float))


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    ks_quantity: float
    ks_min: float
    # orthonormal eigenvectors of the symmetrized matrix, columns
    U: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _readonly(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _readonly(self.eigenvectors))
        if self.U is not None:
            object.__setattr__(self, "U", _readonly(self.U))

    @property
    def lambda2(self):
        return float(self.eigenvalues[1])

    def xi(self, index):
        """Eigenvector ``index`` (0-based; ``xi(0)`` is the constant vector)."""
        return self.eigenvectors[:, index]


@dataclass(frozen=True)
class ConditionReport:
    delta: float
    xi_floor: float
    degree_uniformity_error: float
    noise_invertible: Optional[bool]
    taylor_constraint_ok: bool
    degree_tolerance: float = DEGREE_RTOL

    @property
    def rows_separated(self):
        return math.isfinite(self.delta) and self.delta > 0

    @property
    def degrees_uniform(self):
        return self.degree_uniformity_error <= self.degree_tolerance

    @property
    def entries_bounded(self):
        return self.xi_floor > 0

    @property
    def all_ok(self):
        """Conditions 1-3, plus invertibility of the noise when one was supplied."""
        ok = self.rows_separated and self.degrees_uniform and self.entries_bounded
        if self.noise_invertible is not None:
            ok = ok and self.noise_invertible
        return ok

    def as_dict(self):
        return {
            "delta": self.delta,
            "xi_floor": self.xi_floor,
            "degree_uniformity_error": self.degree_uniformity_error,
            "noise_invertible": self.noise_invertible,
            "taylor_constraint_ok": self.taylor_constraint_ok,
            "rows_separated": self.rows_separated,
            "degrees_uniform": self.degrees_uniform,
            "entries_bounded": self.entries_bounded,
            "all_ok": self.all_ok,
        }


def derive_transition(spec: ModelSpec, rtol: float = DEGREE_RTOL) -> TransitionSpec:
    """``P_ij = Q_ij pi_j / d`` for a model with uniform expected degree ``d``."""
    Q, pi = spec.Q_scaled, spec.pi
    if np.max(np.abs(Q - Q.T)) > SYM_TOL * max(1.0, float(np.abs(Q).max())):
        raise NonSymmetricQ("Q_scaled is not symmetric")
    degrees = Q @ pi
    d = float(pi @ degrees)
    if d <= 0:
        raise DegreeNotUniform("average degree is zero")
    spread = float(np.max(np.abs(degrees - d)))
    if spread > rtol * d:
        raise DegreeNotUniform(
            f"row degrees {degrees.tolist()} differ from d={d} by {spread:.3g}"
        )
    P = Q * pi[None, :] / d
    # renormalize away the (<= rtol) degree spread so rows are stochastic to 1e-15
    P = P / P.sum(axis=1, keepdims=True)
    return TransitionSpec(P=P, d=d, d_pi=d / spec.n)


def jacobi_eigh(A, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi eigensolver for a small symmetric matrix.

    Returns ``(w, V)`` with ``A V = V diag(w)``; sweeps stop once the
    off-diagonal Frobenius norm falls below ``tol``.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum((A - np.diag(np.diag(A))) ** 2)))
        if off < tol:
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = A[p, r]
                if abs(apr) < 1e-300:
                    continue
                theta = (A[r, r] - A[p, p]) / (2.0 * apr)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, ar = A[:, p].copy(), A[:, r].copy()
                A[:, p] = c * ap - s * ar
                A[:, r] = s * ap + c * ar
                ap, ar = A[p, :].copy(), A[r, :].copy()
                A[p, :] = c * ap - s * ar
                A[r, :] = s * ap + c * ar
                vp, vr = V[:, p].copy(), V[:, r].copy()
                V[:, p] = c * vp - s * vr
                V[:, r] = s * vp + c * vr
    else:
        raise RuntimeError("Jacobi sweeps did not converge")
    return np.diag(A).copy(), V


def eigendecompose(t: TransitionSpec, pi) -> Spectrum:
    """Spectrum of a reversible ``P`` via its symmetrization ``D^{1/2} P D^{-1/2}``."""
    P = t.P
    pi = np.asarray(pi, dtype=float)
    flow = pi[:, None] * P
    if np.max(np.abs(flow - flow.T)) > 1e-12:
        raise NotReversible("detailed balance pi_i P_ij = pi_j P_ji fails")
    r = np.sqrt(pi)
    S = r[:, None] * P / r[None, :]
    S = 0.5 * (S + S.T)
    w, U = jacobi_eigh(S)

    q = len(pi)
    order = sorted(range(q), key=lambda i: (-round(abs(w[i]), 12), -round(w[i], 12), i))
    w, U = w[order], U[:, order]

    # the top eigenspace always contains sqrt(pi); make it the first basis vector
    top = np.flatnonzero(np.abs(w - 1.0) < 1e-10)
    if top.size == 0 or top[0] != 0:
        raise NotReversible("P does not have 1 as its leading eigenvalue")
    basis, _ = np.linalg.qr(np.column_stack([r, U[:, top]]))
    U[:, top] = basis[:, : top.size]
    w[top] = 1.0

    xi = U / r[:, None]
    for i in range(q):
        j = int(np.argmax(np.abs(xi[:, i])))
        if xi[j, i] < 0:
            xi[:, i] = -xi[:, i]
            U[:, i] = -U[:, i]
    xi[:, 0] = 1.0
    l2 = float(w[1]) if q > 1 else 0.0
    lq = float(w[-1])
    return Spectrum(
        eigenvalues=w,
        eigenvectors=xi,
        ks_quantity=l2 * l2 * t.d,
        ks_min=lq * lq * t.d,
        U=U,
    )


def kesten_stigum(s: Spectrum, d: float):
    """``(lambda_2^2 d, lambda_q^2 d)``."""
    l2 = float(s.eigenvalues[1])
    lq = float(s.eigenvalues[-1])
    return l2 * l2 * d, lq * lq * d


def row_separation_delta(P, lambda2):
    """Sharpest ``delta`` with ``||P_i - P_j||_1 >= delta * q * |lambda_2|`` for all pairs."""
    q = P.shape[0]
    gaps = [np.abs(P[i] - P[j]).sum() for i in range(q) for j in range(i + 1, q)]
    if min(gaps) <= 1e-15:
        return 0.0
    if abs(lambda2) < 1e-14:
        # no signal at all: reported as infinite and treated as a failure
        return math.inf
    return float(min(gaps) / (q * abs(lambda2)))


def taylor_constraint_lhs(pi, xi_floor, lambda2):
    pi = np.asarray(pi, dtype=float)
    if xi_floor <= 0:
        return math.inf
    coeff = 2 * math.sqrt(2) * np.max(pi**1.5) * np.max(pi**-1.5) / xi_floor**3
    return float(coeff * abs(lambda2))


def check_conditions(spec: ModelSpec, t: TransitionSpec, s: Spectrum, delta_opt=None):
    """Evaluate the four model conditions; failures are reported, never raised."""
    q = spec.q
    lam2 = float(s.eigenvalues[1])
    delta = row_separation_delta(t.P, lam2)
    xi_floor = float(t.P.min())
    degrees = spec.Q_scaled @ spec.pi
    uniformity = float(np.max(np.abs(degrees - t.d)))
    noise = as_noise(delta_opt)
    noise_ok = None if noise is None else noise.invertible
    lhs = taylor_constraint_lhs(spec.pi, xi_floor, lam2)
    rhs = delta**2 * q**2 / 8.0
    return ConditionReport(
        delta=delta,
        xi_floor=xi_floor,
        degree_uniformity_error=uniformity,
        noise_invertible=noise_ok,
        taylor_constraint_ok=bool(lhs < rhs),
        degree_tolerance=DEGREE_RTOL * t.d,
    )


def perturbation_family(pi, M, scale, d, n=10_000):
    """Model with ``P = 1 pi^T + scale * M`` for a zero-row-sum ``M``.

    ``Q_scaled = d * P D_pi^{-1}``; it is symmetric exactly when
    ``D_pi M`` is, otherwise :class:`NonSymmetricQ` is raised.
    """
    pi = np.asarray(pi, dtype=float)
    M = np.asarray(M, dtype=float)
    if np.max(np.abs(M.sum(axis=1))) > 1e-12 * max(1.0, float(np.abs(M).max())):
        raise ValueError("rows of M must sum to zero")
    P = np.ones((len(pi), 1)) * pi[None, :] + scale * M
    if np.any(P <= 0) or np.any(P >= 1):
        raise EntriesOutOfRange("perturbed P has entries outside (0, 1)")
    Q = d * P / pi[None, :]
    Q = 0.5 * (Q + Q.T) if np.max(np.abs(Q - Q.T)) <= 1e-12 * Q.max() else Q
    spec = ModelSpec(pi=pi, Q_scaled=Q, n=n)
    return spec, derive_transition(spec)


@dataclass(frozen=True)
class Model:
    """A model together with its derived transition matrix and spectrum."""

    spec: ModelSpec
    transition: TransitionSpec
    spectrum: Spectrum

    @property
    def q(self):
        return self.spec.q

    @property
    def pi(self):
        return self.spec.pi

    @property
    def P(self):
        return self.transition.P

    @property
    def d(self):
        return self.transition.d

    def conditions(self, delta_opt=None):
        return check_conditions(self.spec, self.transition, self.spectrum, delta_opt)


def analyze(spec: ModelSpec) -> Model:
    t = derive_transition(spec)
    return Model(spec=spec, transition=t, spectrum=eigendecompose(t, spec.pi))
