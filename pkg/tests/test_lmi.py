import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sporadic.lmi import (
    Certificate,
    DesignVariables,
    build_analysis_M1,
    build_analysis_M1bar,
    build_analysis_M2,
    build_lambda,
    build_M1hat,
    build_M2hat,
    build_phi,
    build_theta,
)
from sporadic.model import (
    ClosedLoopMatrices,
    PlantModel,
    assemble_closed_loop,
    build_P1,
    factor_U,
    invert_controller_map,
)
from sporadic.reference import REFERENCE_GAMMA1, REFERENCE_GAMMA2, reference_values, unicycle_plant

from conftest import random_controller, random_plant, random_spd

ROUND = 5e-2


def lmax(a):
    return np.linalg.eigvalsh((a + a.T) / 2)[-1]


def scale(a):
    return np.max(np.abs(a))


def random_vars(rng, plant, delta=1.0, zero=False):
    n, nu, ny = plant.n_p, plant.n_u, plant.n_y
    g = (lambda *s: np.zeros(s)) if zero else (lambda *s: rng.standard_normal(s))

    def sym(k):
        a = g(k, k)
        return a + a.T

    return DesignVariables(
        X=sym(n), Y=sym(n), K=g(n, n), L=g(n, ny), M=g(nu, n), N=g(nu, ny), J=g(ny, ny), Z=g(ny, n),
        V=g(n, n), P2=sym(ny), Q=sym(ny), O=sym(ny), R=sym(2 * n), F=sym(2 * n), F_i=sym(2 * n),
        gamma1=0.0 if zero else float(rng.standard_normal()), gamma2=0.0 if zero else float(rng.standard_normal()),
        delta=delta,
    )


def combine(a, b, op):
    out = {}
    for k, va in a.as_dict().items():
        out[k] = va if k == "delta" else op(va, getattr(b, k))
    return DesignVariables(**out)


def reference_vars():
    v = reference_values()
    names = ("X", "Y", "K", "L", "M", "N", "J", "Z", "V", "P2", "Q", "O", "R", "F", "F_i")
    return DesignVariables(**{k: v[k] for k in names}, gamma1=REFERENCE_GAMMA1, gamma2=REFERENCE_GAMMA2,
                           delta=v["delta"])


# -- Theta ---------------------------------------------------------------


def test_theta_singular_corner():
    I = np.eye(2)
    Theta = build_theta(I, I)
    np.testing.assert_array_equal(Theta, np.block([[I, I], [I, I]]))
    assert abs(np.linalg.eigvalsh(Theta)[0]) < 1e-14


def test_theta_spectrum():
    n = 3
    w = np.sort(np.linalg.eigvalsh(build_theta(2 * np.eye(n), np.eye(n))))
    expected = np.sort(np.repeat([(3 - math.sqrt(5)) / 2, (3 + math.sqrt(5)) / 2], n))
    np.testing.assert_allclose(w, expected, rtol=1e-12)


def test_theta_reference_positive():
    v = reference_values()
    assert np.linalg.eigvalsh(build_theta(v["X"], v["Y"]))[0] > 0


# -- synthesis blocks ----------------------------------------------------


def test_M1hat_reference_within_rounding():
    M = build_M1hat(reference_vars(), unicycle_plant())
    assert lmax(M) <= ROUND * scale(M)


def test_M1hat_simple_point():
    plant = unicycle_plant()
    v = random_vars(np.random.default_rng(0), plant, zero=True)
    n = plant.n_p
    v.F, v.Q, v.gamma1 = np.eye(2 * n), np.eye(2), 1.0
    M = build_M1hat(v, plant)
    # oracle: assemble the same matrix by hand; with Y = V = 0, Phi = [[0, I], [0, 0]]
    size = 2 * n + 2 + 1 + 2 * n + 1
    E = np.zeros((size, size))
    Lam = np.block([[np.zeros((n, n)), plant.A_p], [np.zeros((n, n)), np.zeros((n, n))]])
    Xi = np.vstack([plant.W_p, np.zeros((n, 1))])
    E[:2 * n, 2 * n + 2:2 * n + 3] = Xi
    Phi = np.block([[np.zeros((n, n)), np.eye(n)], [np.zeros((n, n)), np.zeros((n, n))]])
    E[:2 * n, 2 * n + 3:4 * n + 3] = Phi.T
    Co = np.hstack([plant.C_op, np.zeros((1, n))])
    E[:2 * n, -1:] = Phi.T @ Co.T
    E = E + E.T
    E[:2 * n, :2 * n] = Lam + Lam.T
    E[2 * n:2 * n + 2, 2 * n:2 * n + 2] = -np.eye(2)
    E[2 * n + 2, 2 * n + 2] = -1
    E[2 * n + 3:4 * n + 3, 2 * n + 3:4 * n + 3] = -np.eye(2 * n)
    E[-1, -1] = -1
    np.testing.assert_allclose(M, E, atol=1e-14)
    assert lmax(M) == pytest.approx(np.linalg.eigvalsh(E)[-1], abs=1e-12)


def test_Pi_sign():
    plant = PlantModel(np.zeros((2, 2)), np.eye(2), np.zeros((2, 1)), np.eye(2), np.zeros((1, 2)))
    v = random_vars(np.random.default_rng(0), plant, zero=True)
    v.N = np.eye(2)
    M = build_M1hat(v, plant)
    np.testing.assert_array_equal(M[:4, 4:6], -np.vstack([np.eye(2), np.zeros((2, 2))]))


def test_M2hat_tau_zero_block(rng):
    plant = unicycle_plant()
    v = random_vars(rng, plant, delta=0.7)
    M = build_M2hat(0.0, v, plant)
    np.testing.assert_allclose(M[:2, :2], v.J + v.J.T - 0.7 * v.P2 + v.O, atol=1e-13)


@pytest.mark.parametrize("tau", [0.0, 1.0])
def test_M2hat_reference_within_rounding(tau):
    M = build_M2hat(tau, reference_vars(), unicycle_plant(), T2=1.0)
    assert lmax(M) <= ROUND * scale(M)


def test_M2hat_rejects_tau_outside():
    with pytest.raises(ValueError):
        build_M2hat(1.5, reference_vars(), unicycle_plant(), T2=1.0)
    with pytest.raises(ValueError):
        build_M2hat(-0.1, reference_vars(), unicycle_plant(), T2=1.0)


def test_M2hat_is_convex_combination_of_endpoints(rng):
    plant = unicycle_plant()
    v = random_vars(rng, plant, delta=2.3)
    T2 = 1.0
    M0, MT = build_M2hat(0, v, plant, T2), build_M2hat(T2, v, plant, T2)
    eT = math.exp(v.delta * T2)
    for tau in rng.uniform(0, T2, 50):
        lam = (eT - math.exp(v.delta * tau)) / (eT - 1)
        np.testing.assert_allclose(build_M2hat(tau, v, plant, T2), lam * M0 + (1 - lam) * MT, atol=1e-9)


def test_frozen_design_M2_negative_on_interval(frozen):
    cert, cl = frozen["certificate"], frozen["closed_loop"]
    for tau in np.linspace(0, cert.T2, 50):
        M = build_analysis_M2(tau, cert.P2, cert.O, cert.R, cert.gamma2, cert.delta, cl, cert.T2)
        assert lmax(M) <= 1e-7 * scale(M)


# -- analysis blocks -----------------------------------------------------


def _cl(A_xx, A_xe, W_x, A_ex, A_ee, W_e, C_o):
    return ClosedLoopMatrices(A_xx, A_xe, W_x, A_ex, A_ee, W_e, C_o)


def test_analysis_M1_trivial():
    n, ne = 2, 1
    cl = _cl(-np.eye(n), np.zeros((n, ne)), np.zeros((n, 1)), np.zeros((ne, n)), np.zeros((ne, ne)),
             np.zeros((ne, 1)), np.zeros((1, n)))
    M = build_analysis_M1(np.eye(n), np.eye(n), np.eye(ne), 1.0, cl)
    np.testing.assert_array_equal(M, -np.eye(n + ne + 1))


def test_analysis_M2_trivial():
    ne, nx = 2, 3
    cl = _cl(np.zeros((nx, nx)), np.zeros((nx, ne)), np.zeros((nx, 1)), np.zeros((ne, nx)), -np.eye(ne),
             np.zeros((ne, 1)), np.zeros((1, nx)))
    M = build_analysis_M2(0.4, np.eye(ne), np.eye(ne), np.eye(nx), 1.0, 0.0, cl)
    np.testing.assert_array_equal(M, -np.eye(ne + nx + 1))


def test_schur_equivalence(rng):
    """lambda_max(M1) <= 0 iff the Schur-expanded form is <= 0, with S = F^-1."""
    agree = 0
    for k in range(200):
        plant = random_plant(rng)
        ctrl, hold = random_controller(rng, plant)
        cl = assemble_closed_loop(plant, ctrl, hold)
        P1 = random_spd(rng, 6)
        F = random_spd(rng, 6)
        Q = random_spd(rng, 2) * (10 ** rng.uniform(0, 3))
        g1 = 10 ** rng.uniform(0, 3)
        # shift the state matrix to get both signs of the test
        cl = _cl(cl.A_xx - rng.uniform(0, 30) * np.eye(6), cl.A_xe, cl.W_x, cl.A_ex, cl.A_ee, cl.W_e, cl.C_o)
        a = lmax(build_analysis_M1(P1, np.linalg.inv(F), Q, g1, cl)) <= 0
        b = lmax(build_analysis_M1bar(P1, F, Q, g1, cl)) <= 0
        assert a == b
        agree += a
    assert 0 < agree < 200  # both outcomes were exercised


def test_M2hat_equals_analysis_after_substitution(rng):
    for _ in range(20):
        plant = random_plant(rng)
        ctrl, _ = random_controller(rng, plant)
        v = random_vars(rng, plant, delta=abs(rng.standard_normal()) + 0.1)
        v.P2 = random_spd(rng, 2)
        CpBp = plant.C_p @ plant.B_p
        P2i = np.linalg.inv(v.P2)
        hold_H = P2i @ v.J + CpBp @ ctrl.D_c
        hold_E = P2i @ v.Z + CpBp @ ctrl.C_c
        from sporadic.model import HolderParams

        cl = assemble_closed_loop(plant, ctrl, HolderParams(hold_H, hold_E))
        tau = rng.uniform(0, 1)
        M_hat = build_M2hat(tau, v, plant)
        M = build_analysis_M2(tau, v.P2, v.O, v.R, v.gamma2, v.delta, cl)
        # the synthesis form only sees the plant part of A_ex through P2 C_p A_p - J C_p
        # and -Z for the controller part, which is P2 A_ex after the substitution
        assert np.max(np.abs(M_hat - M)) <= 1e-9 * max(1, scale(M))


def test_congruence_of_synthesis_blocks(rng):
    """Lambda, Pi and Xi equal Phi' P1 A Phi, Phi' P1 B and Phi' P1 V for a recovered controller."""
    for _ in range(10):
        plant = random_plant(rng)
        n = plant.n_p
        X, Y = random_spd(rng, n), random_spd(rng, n)
        X = X / (2 * np.linalg.norm(X, 2) * np.linalg.norm(Y, 2))
        V = rng.standard_normal((n, n)) + 3 * np.eye(n)
        U = factor_U(X, Y, V)
        ctrl, hold = random_controller(rng, plant)
        K, L, M, N = invert_controller_map(ctrl, X, Y, U, V, plant)
        cl = assemble_closed_loop(plant, ctrl, hold)
        P1 = build_P1(X, Y, U, V)
        Phi = build_phi(Y, V)
        v = random_vars(rng, plant)
        v.X, v.Y, v.V, v.K, v.L, v.M, v.N = X, Y, V, K, L, M, N
        Mh = build_M1hat(v, plant)
        tol = 1e-8 * max(1, scale(P1))
        np.testing.assert_allclose(build_lambda(v, plant), Phi.T @ P1 @ cl.A_xx @ Phi, atol=tol)
        np.testing.assert_allclose(Mh[:2 * n, 2 * n:2 * n + 2], Phi.T @ P1 @ cl.A_xe, atol=tol)
        np.testing.assert_allclose(Mh[:2 * n, 2 * n + 2:2 * n + 3], Phi.T @ P1 @ cl.W_x, atol=tol)


# -- properties ----------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0), st.floats(0.05, 5.0))
def test_builders_affine_and_symmetric(seed, tau, delta):
    rng = np.random.default_rng(seed)
    plant = unicycle_plant()
    a, b = random_vars(rng, plant, delta), random_vars(rng, plant, delta)
    z = random_vars(rng, plant, delta, zero=True)
    ab = combine(a, b, lambda x, y: x + y)
    for f in (lambda v: build_M1hat(v, plant), lambda v: build_M2hat(tau, v, plant),
              lambda v: build_theta(v.X, v.Y)):
        fa, fb, fz, fab = f(a), f(b), f(z), f(ab)
        np.testing.assert_allclose(fa + fb - fz, fab, atol=1e-10 * max(1, scale(fab)))
        assert np.max(np.abs(fa - fa.T)) <= 1e-12 * max(1, scale(fa))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_M2hat_monotone_in_delta_at_zero(seed, d1, d2):
    rng = np.random.default_rng(seed)
    plant = unicycle_plant()
    v = random_vars(rng, plant)
    v.P2 = random_spd(rng, 2)
    hi, lo = max(d1, d2), min(d1, d2)
    v_hi = DesignVariables(**{**v.as_dict(), "delta": hi})
    v_lo = DesignVariables(**{**v.as_dict(), "delta": lo})
    assert lmax(build_M2hat(0, v_hi, plant) - build_M2hat(0, v_lo, plant)) <= 1e-12


def test_analysis_builders_symmetric(frozen):
    cert, cl = frozen["certificate"], frozen["closed_loop"]
    for M in (build_analysis_M1(cert.P1, cert.S, cert.Q, cert.gamma1, cl),
              build_analysis_M2(0.3, cert.P2, cert.O, cert.R, cert.gamma2, cert.delta, cl)):
        assert np.max(np.abs(M - M.T)) <= 1e-12 * scale(M)


# -- certificate ---------------------------------------------------------


def test_certificate_constants_closed_form():
    I3, I2 = np.eye(3), np.eye(2)
    cert = Certificate(P1=I3, P2=I2, S=2 * I3, R=I3, Q=I2, O=2 * I2, delta=0.0, gamma1=1, gamma2=1, gamma=2, T2=1)
    assert cert.k_v1 == pytest.approx(1) and cert.k_v2 == pytest.approx(1)
    assert cert.chi1 == pytest.approx(1) and cert.chi2 == pytest.approx(1)
    assert cert.lambda_t == pytest.approx(0.5)
    cert = Certificate(P1=I3, P2=3 * I2, S=2 * I3, R=I3, Q=I2, O=2 * I2, delta=0.5, gamma1=1, gamma2=1, gamma=2, T2=2)
    assert cert.c_v2_high == pytest.approx(3 * math.e)
    assert cert.chi2 == pytest.approx(3 * math.e)


def test_certificate_supply_pieces(rng):
    cert = Certificate(P1=np.eye(3), P2=np.eye(2), S=2 * np.eye(3), R=np.eye(3), Q=np.eye(2), O=3 * np.eye(2),
                       delta=1.0, gamma1=4.0, gamma2=5.0, gamma=3.0, T2=1.0)
    x, e, d = rng.standard_normal(3), rng.standard_normal(2), rng.standard_normal(1)
    C = rng.standard_normal((1, 3))
    assert cert.rho1(x) == pytest.approx(2 * x @ x)
    assert cert.sigma1(e) == pytest.approx(3 * e @ e)
    assert cert.rho3(x, d, C) == pytest.approx(-(C @ x) @ (C @ x) + 4 * d @ d)
    assert cert.sigma3(d) == pytest.approx(5 * d @ d)


def test_certificate_json_round_trip(frozen):
    cert = frozen["certificate"]
    back = Certificate.from_json_dict(cert.to_json_dict())
    np.testing.assert_array_equal(back.P1, cert.P1)
    assert back.delta == cert.delta
