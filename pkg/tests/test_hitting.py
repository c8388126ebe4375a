import math

import numpy as np
import pytest

from smp_perturb import catalog
from smp_perturb.hitting import (
    NotFinite,
    divergence_threshold,
    expected_exp_exit,
    finiteness_check,
    hitting_moments,
    occupation_total,
    solidarity_residual,
    solve_omega,
    solve_phi,
    taboo_phi,
)
from smp_perturb.moments import moment_p
from smp_perturb.oracle import OracleMoments


def test_solve_phi_examples(M1, M2):
    assert solve_phi(M1, 0.1, 0.0, 1).phi[0, 0] == pytest.approx(0.4, abs=1e-14)
    phi = solve_phi(M2, 0.2, 0.1, 1).phi[0]
    np.testing.assert_allclose(phi, [0.8 * math.exp(0.2), 0.8 * math.exp(0.1)], atol=1e-14)
    phi = solve_phi(M2, 0.0, 0.0, 1, R=2).phi[:, 0]
    np.testing.assert_allclose(phi, [1.0, 2.0, 4.0], atol=1e-13)


def test_solve_omega_examples(M1, M2):
    for e in (0.0, 0.3):
        for rho in (-1.0, 0.0, 0.7):
            assert solve_omega(M1, e, rho, 1, 1).omega[1][0, 0] == pytest.approx(1.0, abs=1e-14)
    assert solve_omega(M2, 0.3, 0.2, 1, 2).omega[2][0, 0] == pytest.approx(math.exp(0.2), abs=1e-14)
    om = solve_omega(M2, 0.0, 0.0, 1, 1).omega[1][0]
    np.testing.assert_allclose(om, [1.0, 0.0], atol=1e-14)


def test_solve_omega_bad_state(M2):
    with pytest.raises(ValueError):
        solve_omega(M2, 0.0, 0.0, 1, 3)


def test_taboo_phi_examples(M1, M2):
    assert taboo_phi(M2, 0.0, 0.0, 2, {1})[1] == 0.0
    np.testing.assert_allclose(taboo_phi(M2, 0.2, 0.0, 1), solve_phi(M2, 0.2, 0.0, 1).phi[0], atol=0)
    assert taboo_phi(M1, 0.0, 0.0, 1)[0] == pytest.approx(0.5)


def test_finiteness_examples(M1, M2, cycle):
    assert finiteness_check(M1, 0.0, 0.0, 1).invertible
    assert finiteness_check(M2, 0.0, 0.4, 1).invertible
    rep = finiteness_check(cycle, 0.0, 0.5, 1)
    assert not rep.invertible
    assert rep.spectral_radius_proxy > 1.0
    with pytest.raises(NotFinite):
        solve_phi(cycle, 0.0, 0.5, 1)
    with pytest.raises(NotFinite):
        solve_omega(cycle, 0.0, 0.5, 1, 2)


def test_critical_cycle_is_infinite(cycle):
    # at rho = 0 the 2-3 cycle has spectral radius exactly one
    assert not finiteness_check(cycle, 0.0, 0.0, 1).invertible
    assert divergence_threshold(cycle, 0.0, 1) == pytest.approx(0.0, abs=1e-9)


def test_solidarity_examples(M2, small_randoms):
    assert abs(solidarity_residual(M2, 0.2, 0.0, 1, 2)) <= 1e-12
    assert solidarity_residual(M2, 0.2, 0.0, 2, 2) == 0.0
    assert abs(solidarity_residual(M2, 0.0, 0.0, 1, 2)) <= 1e-12
    assert 1 - taboo_phi(M2, 0.0, 0.0, 2)[1] == pytest.approx(0.0, abs=1e-14)
    for m in small_randoms:
        for i in range(1, m.n_states + 1):
            for j in range(1, m.n_states + 1):
                assert abs(solidarity_residual(m, m.eps_max / 2, 0.0, i, j)) <= 1e-10


def test_neumann_sum_agrees(small_randoms):
    for m in small_randoms:
        for j in range(1, m.n_states + 1):
            mat = moment_p(m, m.eps_max, 0.05, 0, {j})
            P, b = mat.block, mat.column(j)
            acc, term = np.zeros_like(b), b.copy()
            for _ in range(20000):
                acc += term
                term = P @ term
                if np.abs(term).max() < 1e-16:
                    break
            np.testing.assert_allclose(solve_phi(m, m.eps_max, 0.05, j).phi[0], acc, atol=1e-8)


def test_monotone_in_r(small_randoms):
    for m in small_randoms:
        hm = hitting_moments(m, 0.0, 0.0, 1, 3)
        assert np.all(np.diff(hm.phi, axis=0) >= -1e-12)
        assert np.all(hm.phi >= 0)


def test_occupation_sum_identity(small_randoms):
    for m in small_randoms:
        for j in range(1, m.n_states + 1):
            om = solve_omega(m, 0.0, 0.05, j, range(1, m.n_states + 1))
            total = sum(om.omega[s][0] for s in om.omega)
            np.testing.assert_allclose(total, occupation_total(m, 0.0, 0.05, j), rtol=1e-9)
    with pytest.raises(ValueError):
        occupation_total(small_randoms[0], 0.0, 0.0, 1)


def test_exit_transform_matches_oracle(small_randoms):
    m = small_randoms[0]
    orc = OracleMoments(m, 0.0)
    ex = expected_exp_exit(m, 0.0, 0.0, 1)
    # at rho = 0 every path exits, so the transform is one
    np.testing.assert_allclose(ex, 1.0, atol=1e-12)
    assert orc.n_max >= 2000


def test_hitting_moments_matches_separate_solves(small_randoms):
    m = small_randoms[1]
    hm = hitting_moments(m, 0.01, 0.02, 2, 2)
    np.testing.assert_allclose(hm.phi, solve_phi(m, 0.01, 0.02, 2, 2).phi)
    for s in range(1, m.n_states + 1):
        np.testing.assert_allclose(hm.omega[s], solve_omega(m, 0.01, 0.02, 2, s, 2).omega[s])


def test_finiteness_routes_on_threshold_sides():
    for m in catalog.random_models(11, 5):
        thr = min(divergence_threshold(m, 0.0, j) for j in range(1, m.n_states + 1))
        if not np.isfinite(thr):
            continue
        for rho, expect in ((0.9 * thr, True), (1.1 * thr, False)):
            j = int(np.argmin([divergence_threshold(m, 0.0, t) for t in range(1, m.n_states + 1)])) + 1
            assert finiteness_check(m, 0.0, rho, j).invertible is expect
