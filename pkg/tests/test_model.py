import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import model_grid, random_perturbation_model, scale_limit, zero_row_sum
from oracles import power_iteration_spectrum
from sbmrecon.errors import (
    DegreeNotUniform,
    EntriesOutOfRange,
    NonSymmetricQ,
    NotReversible,
    SingularNoise,
)
from sbmrecon.model import (
    ModelSpec,
    NoiseMatrix,
    TransitionSpec,
    analyze,
    check_conditions,
    derive_transition,
    eigendecompose,
    jacobi_eigh,
    kesten_stigum,
    perturbation_family,
)


def test_two_community_transition(sym2):
    assert sym2.d == pytest.approx(3.0, abs=1e-14)
    np.testing.assert_allclose(sym2.P, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], atol=1e-15)
    assert sym2.transition.d_pi == pytest.approx(3.0 / sym2.spec.n)


def test_identity_transition():
    m = analyze(ModelSpec(pi=np.full(3, 1 / 3), Q_scaled=9 * np.eye(3)))
    assert m.d == pytest.approx(3.0)
    np.testing.assert_allclose(m.P, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(m.spectrum.eigenvalues, 1.0, atol=1e-12)
    s = m.spectrum
    resid = m.P @ s.eigenvectors - s.eigenvectors * s.eigenvalues[None, :]
    assert np.abs(resid).max() < 1e-10


def test_generic_three_community_elementwise(asym3):
    pi, Q, d = asym3.pi, asym3.spec.Q_scaled, asym3.d
    for i in range(3):
        assert sum(Q[i, j] * pi[j] for j in range(3)) == pytest.approx(d, rel=1e-12)
        for j in range(3):
            assert abs(asym3.P[i, j] - Q[i, j] * pi[j] / d) < 1e-12


def test_nonuniform_degree_rejected():
    with pytest.raises(DegreeNotUniform):
        derive_transition(ModelSpec(pi=[0.5, 0.5], Q_scaled=[[4, 2], [2, 6]]))


def test_asymmetric_Q_rejected():
    with pytest.raises(NonSymmetricQ):
        ModelSpec(pi=[0.5, 0.5], Q_scaled=[[4, 2], [2.1, 4]])


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(pi=[0.6, 0.6], Q_scaled=np.eye(2))
    with pytest.raises(ValueError):
        ModelSpec(pi=[1.0, 0.0], Q_scaled=np.eye(2))
    with pytest.raises(ValueError):
        ModelSpec(pi=[0.5, 0.5], Q_scaled=[[-1, 1], [1, 1]])


def test_json_round_trip(asym3):
    text = asym3.spec.to_json()
    doc = json.loads(text)
    assert list(doc) == ["q", "pi", "Q_scaled", "n"]
    back = ModelSpec.from_json(text)
    np.testing.assert_array_equal(back.Q_scaled, asym3.spec.Q_scaled)
    np.testing.assert_array_equal(back.pi, asym3.pi)


def test_symmetric_spectrum(sym2):
    s = sym2.spectrum
    np.testing.assert_allclose(s.eigenvalues, [1.0, 1 / 3], atol=1e-14)
    np.testing.assert_allclose(s.eigenvectors[:, 0], [1, 1], atol=1e-14)
    np.testing.assert_allclose(s.eigenvectors[:, 1], [1, -1], atol=1e-14)
    assert s.ks_quantity == pytest.approx(1 / 3)


def test_spectrum_matches_power_iteration_oracle():
    rng = np.random.default_rng(4)
    for _ in range(5):
        m = random_perturbation_model(rng, 4)
        s = m.spectrum
        vals, vecs = power_iteration_spectrum(m.P, m.pi)
        np.testing.assert_allclose(np.sort(s.eigenvalues), np.sort(vals), atol=1e-10)
        for i in range(4):
            j = int(np.argmin(np.abs(vals - s.eigenvalues[i])))
            v = vecs[:, j]
            # same line up to sign (eigenvalues here are distinct)
            sgn = np.sign(v @ (m.pi * s.eigenvectors[:, i]))
            np.testing.assert_allclose(s.eigenvectors[:, i], sgn * v, atol=1e-8)
        resid = m.P @ s.eigenvectors - s.eigenvectors * s.eigenvalues[None, :]
        assert np.abs(resid).max() < 1e-10


def test_jacobi_on_random_symmetric():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((6, 6))
    A = A + A.T
    w, V = jacobi_eigh(A)
    np.testing.assert_allclose(A @ V, V * w[None, :], atol=1e-10)
    np.testing.assert_allclose(V.T @ V, np.eye(6), atol=1e-12)


def test_not_reversible():
    P = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
    t = TransitionSpec(P=P, d=1.0, d_pi=1e-4)
    with pytest.raises(NotReversible):
        eigendecompose(t, np.array([0.2, 0.3, 0.5]))


def test_sorting_and_sign_convention():
    # eigenvalues 1, 0.2, -0.2 (equal magnitude) must order the positive one first
    pi = np.full(3, 1 / 3)
    M = zero_row_sum(pi, np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0.0]]))
    spec, _ = perturbation_family(pi, M, 0.0, 3.0)
    s = analyze(spec).spectrum
    assert s.eigenvalues[0] == 1.0
    for i in range(3):
        v = s.eigenvectors[:, i]
        assert v[np.argmax(np.abs(v))] > 0


def test_condition_report_symmetric_16_4():
    m = analyze(ModelSpec.symmetric(2, 16, 4))
    rep = m.conditions(NoiseMatrix.uniform_mix(2, 0.8))
    # hand evaluation: P = [[.8,.2],[.2,.8]], lambda2 = .6, ||P1-P2||_1 = 1.2, q = 2
    assert rep.delta == pytest.approx(1.2 / (2 * 0.6), abs=1e-12)
    assert rep.xi_floor == pytest.approx(0.2)
    assert rep.degree_uniformity_error == 0.0
    assert rep.noise_invertible is True
    lhs = 2 * math.sqrt(2) * 0.5**1.5 * 0.5**-1.5 / 0.2**3 * 0.6
    rhs = rep.delta**2 * 4 / 8
    assert rep.taylor_constraint_ok is (lhs < rhs)
    assert rep.taylor_constraint_ok is False
    assert rep.rows_separated and rep.degrees_uniform and rep.entries_bounded and rep.all_ok


def test_condition_report_failures():
    pi = np.full(3, 1 / 3)
    Q = np.array([[4.0, 4.0, 1.0], [4.0, 4.0, 1.0], [1.0, 1.0, 7.0]])
    m = analyze(ModelSpec(pi=pi, Q_scaled=Q))
    rep = m.conditions()
    assert rep.delta == 0.0 and not rep.rows_separated and not rep.all_ok
    m0 = analyze(ModelSpec(pi=[0.5, 0.5], Q_scaled=[[3, 0], [0, 3]]))
    rep0 = m0.conditions(NoiseMatrix(np.full((2, 2), 0.5)))
    assert rep0.xi_floor == 0.0 and not rep0.entries_bounded
    assert rep0.noise_invertible is False
    flat = analyze(ModelSpec(pi=[0.5, 0.5], Q_scaled=[[5, 5], [5, 5]]))
    assert flat.conditions().delta == 0.0


def test_no_signal_rows_give_zero_delta():
    pi = np.array([0.5, 0.3, 0.2])
    spec, t = perturbation_family(pi, np.zeros((3, 3)), 1.0, 4.0)
    s = eigendecompose(t, pi)
    rep = check_conditions(spec, t, s)
    # equal rows: zero separation takes precedence over lambda_2 = 0
    assert abs(s.lambda2) < 1e-12
    assert rep.delta == 0.0 and not rep.rows_separated


def test_kesten_stigum_values(sym2):
    assert kesten_stigum(sym2.spectrum, sym2.d)[0] == pytest.approx(1 / 3)
    m = analyze(ModelSpec.symmetric(2, 16, 4))
    assert m.spectrum.lambda2 == pytest.approx(0.6)
    assert kesten_stigum(m.spectrum, m.d)[0] == pytest.approx(3.6, abs=1e-12)
    pi = np.array([0.5, 0.5])
    spec, t = perturbation_family(pi, np.zeros((2, 2)), 1.0, 4.0)
    assert kesten_stigum(eigendecompose(t, pi), t.d)[0] == pytest.approx(0.0, abs=1e-24)


def test_perturbation_family_rank_one():
    pi = np.array([0.5, 0.3, 0.2])
    spec, t = perturbation_family(pi, np.zeros((3, 3)), 0.3, 4.0)
    np.testing.assert_allclose(t.P, np.ones((3, 1)) * pi[None, :], atol=1e-15)


def test_perturbation_family_recovers_symmetric_model():
    q, a, d = 3, 0.2, 9.0
    pi = np.full(q, 1 / q)
    M = a * (np.ones((q, q)) - q * np.eye(q))
    spec, t = perturbation_family(pi, M, d**-0.5, d)
    Q = spec.Q_scaled
    off = Q[~np.eye(q, dtype=bool)]
    assert np.ptp(off) < 1e-12 and np.ptp(np.diag(Q)) < 1e-12
    # Q = d 11^T + sqrt(d) M D_pi^{-1} at degree scale
    np.testing.assert_allclose(Q, d + math.sqrt(d) * M / pi[None, :], atol=1e-12)


def test_perturbation_family_out_of_range():
    pi = np.full(2, 0.5)
    with pytest.raises(EntriesOutOfRange):
        perturbation_family(pi, np.array([[-1.0, 1.0], [1.0, -1.0]]), 1.0, 3.0)
    with pytest.raises(ValueError):
        perturbation_family(pi, np.array([[1.0, 1.0], [1.0, -1.0]]), 0.1, 3.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.floats(0.05, 0.95), st.floats(1.0, 25.0), st.integers(0, 2**31))
def test_perturbation_round_trip(q, frac, d, seed):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.full(q, 2.0))
    pi = np.maximum(pi, 0.05)
    pi /= pi.sum()
    M = zero_row_sum(pi, rng.random((q, q)))
    scale = frac * scale_limit(pi, M)
    spec, t = perturbation_family(pi, M, scale, d)
    np.testing.assert_allclose(t.P, np.ones((q, 1)) * pi[None, :] + scale * M, atol=1e-12)
    t2 = derive_transition(ModelSpec(pi=pi, Q_scaled=t.d * t.P / pi[None, :]))
    np.testing.assert_allclose(t2.P, t.P, atol=1e-10)
    np.testing.assert_allclose(t.d * t.P / pi[None, :], spec.Q_scaled, atol=1e-10)


def test_noise_matrix():
    D = NoiseMatrix.uniform_mix(3, 0.9)
    np.testing.assert_allclose(D.Delta.sum(axis=1), 1.0)
    np.testing.assert_allclose(D.inverse_transpose() @ D.Delta.T, np.eye(3), atol=1e-12)
    with pytest.raises(SingularNoise):
        NoiseMatrix(np.full((2, 2), 0.5)).inverse_transpose()
    with pytest.raises(ValueError):
        NoiseMatrix([[0.5, 0.6], [0.5, 0.5]])


@pytest.mark.parametrize("kind_model", model_grid(), ids=lambda km: km[0])
def test_model_grid_invariants(kind_model):
    _, m = kind_model
    P, pi, s = m.P, m.pi, m.spectrum
    q = m.q
    assert np.abs(P.sum(axis=1) - 1).max() < 1e-12
    flow = pi[:, None] * P
    assert np.abs(flow - flow.T).max() < 1e-12
    resid = P @ s.eigenvectors - s.eigenvectors * s.eigenvalues[None, :]
    assert np.abs(resid).max() < 1e-10
    np.testing.assert_allclose(s.eigenvectors[:, 0], 1.0, atol=1e-10)
    norms = np.linalg.norm(s.eigenvectors, axis=0)
    assert np.all(norms <= np.max(pi**-0.5) + 1e-10)
    G = s.eigenvectors.T @ (pi[:, None] * s.eigenvectors)
    np.testing.assert_allclose(G, np.eye(q), atol=1e-10)
    lam2 = abs(s.lambda2)
    bound = math.sqrt(2) * np.max(pi**0.5) * np.max(pi**-0.5) * lam2
    assert np.abs(P - pi[None, :]).max() <= bound + 1e-10
    rep = m.conditions()
    if math.isfinite(rep.delta) and rep.delta > 0:
        xi = s.eigenvectors[:, 1:]
        for i in range(q):
            for j in range(i + 1, q):
                assert np.max(np.abs(xi[i] - xi[j])) >= rep.delta
