"""Hitting-time and occupation moment functionals at a fixed eps.

For a target ``j`` the vectors

* ``Phi_j(rho, r)[i] = sum_n n**r exp(rho*n) P_i{mu_j = n, nu_0 > nu_j}``
* ``omega_js(rho, r)[i] = sum_n n**r exp(rho*n) P_i{xi(n) = s, mu_0 ^ mu_j > n}``

solve ``x = b + jP x`` where ``jP`` is the ``N x N`` moment matrix with column
``j`` zeroed.  Derivative orders ``r >= 1`` reuse one LU factorization of
``I - jP`` with right-hand sides built from the lower orders.

The solution is finite exactly when the powers of ``jP`` decay.  Divergence is
a legitimate outcome and is signalled with :class:`NotFinite`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import warnings

import numpy as np
import scipy.linalg
from scipy.special import comb

from .model import SemiMarkovModel
from .moments import MomentMatrix, RHO_ZERO, moment_p, sojourn_moments

PIVOT_TOL = 1e-12
DECAY_TOL = 1e-10
# near the threshold (radius 1 - delta) decay only shows after ~1/delta steps
MAX_POWER = 2**40


class NotFinite(ArithmeticError):
    """The moment functional is infinite (powers of the taboo matrix do not decay)."""

    def __init__(self, message: str, report: "FinitenessReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class FinitenessReport:
    spectral_radius_proxy: float
    invertible: bool
    neumann_terms: int
    lu_residual: float = float("nan")
    min_pivot: float = float("nan")


@dataclass
class HittingMoments:
    """``phi[r, i - 1]`` and ``omega[s][r, i - 1]`` for target ``j``."""

    rho: float
    j: int
    R: int
    phi: np.ndarray | None = None
    omega: dict[int, np.ndarray] = field(default_factory=dict)
    lam: np.ndarray | None = None
    theta: dict[int, np.ndarray] = field(default_factory=dict)


def _neumann_decay(P: np.ndarray) -> tuple[bool, float, int]:
    """Repeatedly square ``P`` and watch ``||P^m||_inf`` for ``m = 1, 2, 4, ..., MAX_POWER``."""
    M = np.array(P, dtype=float)
    m = 1
    norm = np.inf
    with np.errstate(over="ignore", invalid="ignore"):
        while True:
            norm = float(np.max(np.sum(np.abs(M), axis=1))) if M.size else 0.0
            if not np.isfinite(norm):
                return False, np.inf, m
            if norm < 1.0 - DECAY_TOL:
                radius = norm ** (1.0 / m)
                return True, radius, m
            if m >= MAX_POWER:
                return False, norm ** (1.0 / m), m
            M = M @ M
            m *= 2


def taboo_block(model: SemiMarkovModel, eps: float, rho: float, r: int, taboo: Iterable[int]) -> MomentMatrix:
    return moment_p(model, eps, rho, r, taboo)


def finiteness_check(model: SemiMarkovModel, eps: float, rho: float, j: int, taboo: Iterable[int] = ()) -> FinitenessReport:
    """Decide whether ``(I - jP(rho))^-1`` exists as a convergent Neumann series."""
    P = moment_p(model, eps, rho, 0, {j, *taboo}).block
    ok, radius, m = _neumann_decay(P)
    A = np.eye(len(P)) - P
    e = np.ones(len(P))
    resid = np.inf
    min_piv = 0.0
    # a singular factor is a diagnosed outcome here, not a warning
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        try:
            lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
            min_piv = float(np.min(np.abs(np.diag(lu))))
            if min_piv >= PIVOT_TOL:
                x = scipy.linalg.lu_solve((lu, piv), e, check_finite=False)
                resid = float(np.max(np.abs(A @ x - e)) / (1.0 + np.max(np.abs(x))))
        except (ValueError, scipy.linalg.LinAlgError):
            pass
    return FinitenessReport(radius, ok, m, resid, min_piv)


class TabooSystem:
    """``x = b + jP(rho) x`` with ``jP`` built from columns ``{j} | taboo`` zeroed.

    Holds the factorization of ``I - jP(rho, 0)`` and the derivative matrices
    ``jP(rho, m)`` for ``m = 1..R``.
    """

    def __init__(self, model: SemiMarkovModel, eps: float, rho: float, j: int, R: int = 0, taboo: Iterable[int] = ()):
        n = model.n_states
        if not 1 <= j <= n:
            raise ValueError(f"target j={j} outside 1..{n}")
        taboo = frozenset(taboo)
        if j in taboo:
            raise ValueError("target state cannot be taboo")
        self.model, self.eps, self.rho, self.j, self.R = model, eps, rho, j, R
        cols = {j, *taboo}
        self.mats = [moment_p(model, eps, rho, r, cols) for r in range(R + 1)]
        self.blocks = [m.block for m in self.mats]
        self.report = finiteness_check(model, eps, rho, j, taboo)
        if not self.report.invertible:
            raise NotFinite(
                f"powers of the taboo matrix do not decay (j={j}, rho={rho}, eps={eps}, "
                f"radius proxy {self.report.spectral_radius_proxy:.6g})",
                self.report,
            )
        A = np.eye(n) - self.blocks[0]
        self._lu = scipy.linalg.lu_factor(A, check_finite=False)
        if np.min(np.abs(np.diag(self._lu[0]))) < PIVOT_TOL:
            raise NotFinite(f"I - jP numerically singular (j={j}, rho={rho}, eps={eps})", self.report)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self._lu, b, check_finite=False)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(len(self.blocks[0])))

    def solve_chain(self, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve orders ``0..R`` where ``rhs[r]`` is the order-``r`` inhomogeneity.

        Returns the solutions ``x[r]`` and the assembled right-hand sides
        (``lambda``/``theta`` in the derivative systems).
        """
        R = self.R
        n = len(self.blocks[0])
        x = np.zeros((R + 1, n))
        full = np.zeros((R + 1, n))
        for r in range(R + 1):
            b = np.array(rhs[r], dtype=float)
            for m in range(1, r + 1):
                b += comb(r, m, exact=True) * (self.blocks[m] @ x[r - m])
            full[r] = b
            x[r] = self.solve(b)
        if not np.all(np.isfinite(x)):
            raise NotFinite("non-finite solution", self.report)
        # the true solution is a non-negative series; a negative entry means
        # the linear system has a spurious (non-probabilistic) solution
        scale = max(1.0, float(np.max(np.abs(x[0]))))
        if np.min(x[0]) < -1e-9 * scale:
            raise NotFinite("negative solution component: series diverges", self.report)
        return x, full


def solve_phi(model: SemiMarkovModel, eps: float, rho: float, j: int, R: int = 0) -> HittingMoments:
    sysm = TabooSystem(model, eps, rho, j, R)
    rhs = np.stack([m.column(j) for m in sysm.mats])
    phi, lam = sysm.solve_chain(rhs)
    return HittingMoments(float(rho), j, R, phi=phi, lam=lam)


def solve_omega(model: SemiMarkovModel, eps: float, rho: float, j: int, s: int | Iterable[int], R: int = 0) -> HittingMoments:
    """Occupation moments for one or several occupied states ``s``."""
    ss = [s] if isinstance(s, (int, np.integer)) else list(s)
    n = model.n_states
    for t in ss:
        if not 1 <= t <= n:
            raise ValueError(f"state s={t} outside 1..{n}")
    sysm = TabooSystem(model, eps, rho, j, R)
    soj = sojourn_moments(model, eps, rho, R)
    out = HittingMoments(float(rho), j, R)
    for t in ss:
        rhs = np.stack([soj.hat(t, r, n) for r in range(R + 1)])
        om, th = sysm.solve_chain(rhs)
        out.omega[int(t)] = om
        out.theta[int(t)] = th
    return out


def hitting_moments(model: SemiMarkovModel, eps: float, rho: float, j: int, R: int = 0) -> HittingMoments:
    """Both ``Phi_j`` and ``omega_js`` for all ``s = 1..N`` from one factorization."""
    n = model.n_states
    sysm = TabooSystem(model, eps, rho, j, R)
    phi, lam = sysm.solve_chain(np.stack([m.column(j) for m in sysm.mats]))
    out = HittingMoments(float(rho), j, R, phi=phi, lam=lam)
    soj = sojourn_moments(model, eps, rho, R)
    for s in range(1, n + 1):
        om, th = sysm.solve_chain(np.stack([soj.hat(s, r, n) for r in range(R + 1)]))
        out.omega[s] = om
        out.theta[s] = th
    return out


def taboo_phi(model: SemiMarkovModel, eps: float, rho: float, j: int, taboo: Iterable[int] = ()) -> np.ndarray:
    """``E_i exp(rho*mu_j); nu_0 ^ nu_T > nu_j`` for every start ``i``."""
    sysm = TabooSystem(model, eps, rho, j, 0, taboo)
    x, _ = sysm.solve_chain(sysm.mats[0].column(j)[None, :])
    return x[0]


def expected_exp_exit(model: SemiMarkovModel, eps: float, rho: float, j: int) -> np.ndarray:
    """``E_i exp(rho * (mu_0 ^ mu_j))`` as ``U (p_j + p_0)`` with ``U = (I - jP)^-1``."""
    sysm = TabooSystem(model, eps, rho, j, 0)
    m = sysm.mats[0]
    return sysm.solve(m.column(j) + m.column(0))


def occupation_total(model: SemiMarkovModel, eps: float, rho: float, j: int) -> np.ndarray:
    """``omega_ij(rho) = sum_{s != 0} omega_ijs(rho)`` rebuilt from the exit-time transform.

    Only for ``rho != 0``.
    """
    if abs(rho) < RHO_ZERO:
        raise ValueError("the exit-time reconstruction needs rho != 0")
    return (expected_exp_exit(model, eps, rho, j) - 1.0) / np.expm1(rho)


def solidarity_residual(model: SemiMarkovModel, eps: float, rho: float, i: int, j: int) -> float:
    """``(1 - phi_ii)(1 - _i phi_jj) - (1 - phi_jj)(1 - _j phi_ii)``."""
    if i == j:
        return 0.0
    phi_ii = taboo_phi(model, eps, rho, i)[i - 1]
    phi_jj = taboo_phi(model, eps, rho, j)[j - 1]
    i_phi_jj = taboo_phi(model, eps, rho, j, {i})[j - 1]
    j_phi_ii = taboo_phi(model, eps, rho, i, {j})[i - 1]
    return float((1 - phi_ii) * (1 - i_phi_jj) - (1 - phi_jj) * (1 - j_phi_ii))


def divergence_threshold(model: SemiMarkovModel, eps: float, j: int, rho_hi: float = 64.0, tol: float = 1e-10) -> float:
    """Smallest ``rho`` where the spectral radius of ``jP(rho)`` reaches one.

    Uses eigenvalues directly (independent of :func:`finiteness_check`).
    Returns ``inf`` if the radius stays below one up to ``rho_hi``.
    """

    def radius(rho):
        P = moment_p(model, eps, rho, 0, {j}).block
        return float(np.max(np.abs(np.linalg.eigvals(P)))) if P.size else 0.0

    if radius(rho_hi) < 1.0:
        return np.inf
    lo, hi = -64.0, rho_hi
    if radius(lo) >= 1.0:
        return -np.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if radius(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
