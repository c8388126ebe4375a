import math

import numpy as np
import pytest

from smp_perturb import catalog
from smp_perturb.expansions import (
    SingularAtZero,
    inverse_expansion,
    inverse_identity_residual,
    omega_expansion,
    p_expansion,
    phi_expansion,
    system_residual,
    taboo_series,
    varphi_expansion,
    varphi_expansion_recursive,
)
from smp_perturb.hitting import hitting_moments, solve_omega, solve_phi
from smp_perturb.series import EpsSeries


def test_p_expansion_examples(M1, M2):
    np.testing.assert_allclose(p_expansion(M1, 0.0, 0, 2).coeffs[:, 0, 1], [0.5, -1.0, 0.0])
    e = math.exp(0.1)
    np.testing.assert_allclose(p_expansion(M2, 0.1, 0, 1).coeffs[:, 1, 1], [e, -e], atol=1e-15)
    s = p_expansion(M1, 0.2, 1, 1)
    assert s.order == 0
    assert s.coeffs[0, 0, 1] == pytest.approx(0.5 * math.exp(0.2))
    with pytest.raises(ValueError):
        p_expansion(M1, 0.0, 3, 2)


def test_inverse_expansion_m2(M2):
    for rho in (0.0, 0.3):
        P = taboo_series(p_expansion(M2, rho, 0, 2), {1})
        U = inverse_expansion(P, 2)
        np.testing.assert_allclose(U[0], [[1.0, math.exp(rho)], [0.0, 1.0]], atol=1e-15)
        assert np.all(U[1] == 0) and np.all(U[2] == 0)


def test_inverse_expansion_scalar():
    p0, p1 = 0.3, 0.2
    U = inverse_expansion(EpsSeries([[[p0]], [[p1]], [[0.0]]]), 2)
    assert U[0][0, 0] == pytest.approx(1 / (1 - p0))
    assert U[1][0, 0] == pytest.approx(p1 / (1 - p0) ** 2)
    assert U[2][0, 0] == pytest.approx(p1**2 / (1 - p0) ** 3)


def test_inverse_expansion_singular(cycle):
    P = taboo_series(p_expansion(cycle, 0.5, 0, 1), {1})
    with pytest.raises(SingularAtZero):
        inverse_expansion(P, 1)
    with pytest.raises(ValueError):
        inverse_expansion(P, 2)


def test_inverse_identity(small_randoms):
    for m in small_randoms:
        for j in range(1, m.n_states + 1):
            P = taboo_series(p_expansion(m, 0.0, 0, 3), {j})
            for res in inverse_identity_residual(P, inverse_expansion(P, 3)):
                assert np.max(np.abs(res)) <= 1e-10


def test_phi_expansion_examples(M1, M2):
    t = phi_expansion(M2, 0.1, 1, 1)
    e = math.exp(0.2)
    np.testing.assert_allclose(t.phi[0].coeffs[:, 0], [e, -e], atol=1e-14)
    np.testing.assert_allclose(phi_expansion(M1, 0.0, 1, 2).phi[0].coeffs[:, 0], [0.5, -1.0, 0.0], atol=1e-15)


def test_triangular_orders(small_randoms):
    m = small_randoms[0]
    t = phi_expansion(m, 0.0, 1, 3)
    assert [p.order for p in t.phi] == [3, 2, 1, 0]
    assert [p.order for p in t.lam] == [3, 2, 1, 0]
    o = omega_expansion(m, 0.0, 1, 2, 3)
    assert [w.order for w in o.omega] == [3, 2, 1, 0]
    assert [w.order for w in o.theta] == [3, 2, 1, 0]


def test_zeroth_coefficients_match_unperturbed(small_randoms):
    for m in small_randoms:
        for k in (0, 2):
            hm = hitting_moments(m, 0.0, 0.01, 1, k)
            t = phi_expansion(m, 0.01, 1, k)
            np.testing.assert_allclose(np.stack([p.coeffs[0] for p in t.phi]), hm.phi, rtol=1e-10, atol=1e-12)
            for s in range(1, m.n_states + 1):
                o = omega_expansion(m, 0.01, 1, s, k)
                np.testing.assert_allclose(np.stack([w.coeffs[0] for w in o.omega]), hm.omega[s], rtol=1e-10, atol=1e-12)


def test_varphi_expansion_examples(M1, two_step):
    t = varphi_expansion(M1, 0.3, 1)
    np.testing.assert_allclose(t.psi[0].coeffs[:, 0], [math.exp(0.3), 0.0], atol=1e-15)
    np.testing.assert_allclose(t.varphi[0].coeffs[:, 0], [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(varphi_expansion(M1, 0.0, 1).varphi[0].coeffs[:, 0], [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(varphi_expansion(two_step, 0.0, 1).varphi[0].coeffs[:, 0], [1.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("rho", [0.0, 0.25, -0.6])
def test_varphi_recursive_agrees(small_randoms, rho):
    for m in small_randoms:
        a = varphi_expansion(m, rho, 3)
        b = varphi_expansion_recursive(m, rho, 3)
        for x, y in zip(a.varphi, b.varphi):
            assert x.order == y.order
            np.testing.assert_allclose(x.coeffs, y.coeffs, rtol=1e-9, atol=1e-9)
        for x, y in zip(a.psi, b.psi):
            np.testing.assert_allclose(x.coeffs, y.coeffs, atol=1e-14)


def test_omega_expansion_examples(M1, M2):
    for rho in (0.0, 0.4):
        np.testing.assert_allclose(omega_expansion(M1, rho, 1, 1, 2).omega[0].coeffs[:, 0], [1.0, 0.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(omega_expansion(M2, 0.2, 1, 2, 1).omega[0].coeffs[:, 0], [math.exp(0.2), 0.0], atol=1e-14)


def test_system_residual(small_randoms):
    for m in small_randoms:
        for j in range(1, m.n_states + 1):
            for t in [phi_expansion(m, 0.02, j, 3)] + [omega_expansion(m, 0.02, j, s, 3) for s in range(1, m.n_states + 1)]:
                xs = t.omega if t.s is not None else t.phi
                for x, res in zip(xs, system_residual(m, t)):
                    scale = 1 + np.max(np.abs(x.coeffs), axis=1)
                    assert np.all(np.max(np.abs(res), axis=1) <= 1e-9 * scale)


def test_remainder_exact_on_polynomial_models(M1, M2):
    for e in (0.05, 0.2):
        t = phi_expansion(M2, 0.1, 1, 1)
        assert abs(t.phi[0](e)[0] - solve_phi(M2, e, 0.1, 1).phi[0, 0]) <= 1e-10
        t = phi_expansion(M1, 0.3, 1, 2)
        assert abs(t.phi[0](e)[0] - solve_phi(M1, e, 0.3, 1).phi[0, 0]) <= 1e-10
        o = omega_expansion(M2, 0.2, 1, 2, 1)
        assert abs(o.omega[0](e)[0] - solve_omega(M2, e, 0.2, 1, 2).omega[2][0, 0]) <= 1e-10


def test_remainder_decay_rate():
    m = catalog.random_models(3, 1)[0]
    k = 2
    t = phi_expansion(m, 0.0, 1, k)
    for r in range(k + 1):
        def rem(e):
            return np.max(np.abs(solve_phi(m, e, 0.0, 1, r).phi[r] - t.phi[r](e)))

        ratio = rem(m.eps_max / 8) / rem(m.eps_max / 16)
        target = 2 ** (k - r + 1)
        assert 0.5 * target <= ratio <= 2 * target
