"""Asymptotic eps-expansions of the moment functionals.

Everything is built from the kernel coefficients by exact recursions:

* ``p_expansion``      -- kernel moments ``p_ij(rho, r)`` as series of order ``k - r``
* ``inverse_expansion`` -- coefficients of ``U = (I - jP)^-1``
* ``phi_expansion``    -- ``Phi_j(rho, r)`` for ``r = 0..k`` (order ``k - r``)
* ``varphi_expansion`` -- ``psi_i(rho, r)`` and ``varphi_i(rho, r)`` (``varphi_expansion_recursive``
  rebuilds ``varphi`` from ``psi`` alone)
* ``omega_expansion``  -- ``omega_js(rho, r)`` for ``r = 0..k`` (order ``k - r``)

Series orders follow the triangular scheme: the ``r``-th derivative carries
``k - r + 1`` coefficients.  The truncation falls out of the min-order rule in
:class:`~smp_perturb.series.EpsSeries` arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from .hitting import _neumann_decay
from .model import SemiMarkovModel
from .moments import RHO_ZERO, moment_weights, sojourn_weights
from .series import EpsSeries


class SingularAtZero(ArithmeticError):
    """``I - jP`` at ``eps = 0`` has no convergent Neumann inverse."""


@dataclass
class ExpansionTable:
    rho: float
    j: int | None
    s: int | None
    k: int
    U: list[np.ndarray] = field(default_factory=list)
    phi: list[EpsSeries] = field(default_factory=list)
    lam: list[EpsSeries] = field(default_factory=list)
    omega: list[EpsSeries] = field(default_factory=list)
    theta: list[EpsSeries] = field(default_factory=list)
    psi: list[EpsSeries] = field(default_factory=list)
    varphi: list[EpsSeries] = field(default_factory=list)

    @property
    def U_series(self) -> EpsSeries:
        return EpsSeries(np.stack(self.U))


def p_expansion(model: SemiMarkovModel, rho: float, r: int, k: int) -> EpsSeries:
    """``p_ij[rho, r, n]`` for ``n = 0..k - r``; shape ``(N, N + 1)``."""
    if not 0 <= r <= k:
        raise ValueError(f"need 0 <= r <= k, got r={r}, k={k}")
    order = k - r
    c = model.kernel.coefficients(order)
    return EpsSeries(c @ moment_weights(model.k_max, rho, r), order=order)


def taboo_series(P: EpsSeries, cols) -> EpsSeries:
    """``N x N`` block of a full ``N x (N + 1)`` series with ``cols`` zeroed."""
    c = np.array(P.coeffs[:, :, 1:])
    for t in cols:
        c[:, :, t - 1] = 0.0
    return EpsSeries(c)


def inverse_expansion(P: EpsSeries, k: int) -> list[np.ndarray]:
    """Coefficients ``U[0..k]`` of ``(I - P(eps))^-1``.

    ``U[0] = (I - P[0])^-1`` and ``U[n] = U[0] sum_{q=1..n} P[q] U[n - q]``.
    """
    if P.order < k:
        raise ValueError(f"series order {P.order} < k={k}")
    P0 = P.coeffs[0]
    n = P0.shape[0]
    ok, radius, _ = _neumann_decay(P0)
    if not ok:
        raise SingularAtZero(f"powers of the unperturbed taboo matrix do not decay (radius proxy {radius:.6g})")
    U0 = np.linalg.solve(np.eye(n) - P0, np.eye(n))
    U = [U0]
    for m in range(1, k + 1):
        acc = np.zeros((n, n))
        for q in range(1, m + 1):
            acc += P.coeffs[q] @ U[m - q]
        U.append(U0 @ acc)
    return U


def _apply_U(U: list[np.ndarray], b: EpsSeries) -> EpsSeries:
    m = b.order
    out = np.zeros((m + 1,) + b.shape)
    for n in range(m + 1):
        for q in range(n + 1):
            out[n] += U[q] @ b.coeffs[n - q]
    return EpsSeries(out)


def _kernel_series(model: SemiMarkovModel, rho: float, k: int) -> list[EpsSeries]:
    return [p_expansion(model, rho, r, k) for r in range(k + 1)]


def _solve_recursive(U, blocks, rhs0: EpsSeries, rhs: list[EpsSeries]):
    """Shared layer of the Phi and omega expansions.

    ``x[0] = U rhs0``; for ``r >= 1``
    ``g[r] = rhs[r] + sum_m C(r, m) blocks[m] x[r - m]`` and ``x[r] = U g[r]``.
    """
    xs = [_apply_U(U, rhs0)]
    gs = [rhs0]
    for r in range(1, len(rhs)):
        g = rhs[r]
        for m in range(1, r + 1):
            g = g + comb(r, m, exact=True) * (blocks[m] @ xs[r - m])
        gs.append(g)
        xs.append(_apply_U(U, g))
    return xs, gs


def phi_expansion(model: SemiMarkovModel, rho: float, j: int, k: int) -> ExpansionTable:
    n = model.n_states
    if not 1 <= j <= n:
        raise ValueError(f"target j={j} outside 1..{n}")
    full = _kernel_series(model, rho, k)
    blocks = [taboo_series(P, {j}) for P in full]
    U = inverse_expansion(blocks[0], k)
    pj = [P[:, j] for P in full]
    phi, lam = _solve_recursive(U, blocks, pj[0], pj)
    return ExpansionTable(rho=rho, j=j, s=None, k=k, U=U, phi=phi, lam=lam)


def varphi_expansion(model: SemiMarkovModel, rho: float, k: int) -> ExpansionTable:
    """``psi_i[rho, r, n]`` and ``varphi_i[rho, r, n]``, each of order ``k - r``.

    Both are linear in the kernel coefficients, so each coefficient is a
    finite weighted sum of ``Q_ij[n](k)`` (see :mod:`smp_perturb.moments`).
    """
    psi, varphi = [], []
    for r in range(k + 1):
        c = model.kernel.coefficients(k - r).sum(axis=2)  # (k - r + 1, N, K)
        psi.append(EpsSeries(c @ moment_weights(model.k_max, rho, r)))
        varphi.append(EpsSeries(c @ sojourn_weights(model.k_max, rho, r)))
    return ExpansionTable(rho=rho, j=None, s=None, k=k, psi=psi, varphi=varphi)


def varphi_expansion_recursive(model: SemiMarkovModel, rho: float, k: int) -> ExpansionTable:
    """``varphi`` coefficients recovered from the ``psi`` coefficients alone.

    At ``rho = 0``: ``varphi[r] = (psi[r + 1] - sum_{m<r} C(r+1, m) varphi[m]) / (r + 1)``,
    which needs kernel moments to order ``k + 1``.  Otherwise
    ``varphi[r] = (psi[r] - delta_r0 - e^rho sum_{m<r} C(r, m) varphi[m]) / (e^rho - 1)``,
    where the constant only touches the ``n = 0`` coefficient.  Agrees with
    :func:`varphi_expansion` up to cancellation for small ``|rho|``.
    """
    zero = abs(rho) < RHO_ZERO
    kk = k + 1 if zero else k
    psi = [EpsSeries(p_expansion(model, rho, r, kk).coeffs.sum(axis=2)) for r in range(kk + 1)]
    varphi: list[EpsSeries] = []
    if zero:
        for r in range(k + 1):
            acc = psi[r + 1]
            for m in range(r):
                acc = acc - comb(r + 1, m, exact=True) * varphi[m]
            varphi.append(acc / (r + 1))
    else:
        em1 = np.expm1(rho)
        e = em1 + 1.0
        for r in range(k + 1):
            acc = psi[r] - 1.0 if r == 0 else psi[r]
            for m in range(r):
                acc = acc - e * comb(r, m, exact=True) * varphi[m]
            varphi.append(acc / em1)
    psi = [p.truncate(k - r) for r, p in enumerate(psi[: k + 1])]
    return ExpansionTable(rho=rho, j=None, s=None, k=k, psi=psi, varphi=varphi)


def omega_expansion(model: SemiMarkovModel, rho: float, j: int, s: int, k: int) -> ExpansionTable:
    n = model.n_states
    if not 1 <= j <= n or not 1 <= s <= n:
        raise ValueError(f"states j={j}, s={s} must lie in 1..{n}")
    full = _kernel_series(model, rho, k)
    blocks = [taboo_series(P, {j}) for P in full]
    U = inverse_expansion(blocks[0], k)
    vt = varphi_expansion(model, rho, k)
    hats = []
    for v in vt.varphi:
        c = np.zeros((len(v), n))
        c[:, s - 1] = v.coeffs[:, s - 1]
        hats.append(EpsSeries(c))
    omega, theta = _solve_recursive(U, blocks, hats[0], hats)
    return ExpansionTable(rho=rho, j=j, s=s, k=k, U=U, omega=omega, theta=theta, psi=vt.psi, varphi=vt.varphi)


def system_residual(model: SemiMarkovModel, table: ExpansionTable) -> list[np.ndarray]:
    """Coefficients of ``x[r] - g[r] - jP(rho) x[r]`` for every ``r``.

    ``x``/``g`` are the Phi/lambda (or omega/theta) series of ``table``.  All
    coefficients vanish when the expansion solves the systems order by order.
    """
    xs, gs = (table.omega, table.theta) if table.s is not None else (table.phi, table.lam)
    P0 = taboo_series(p_expansion(model, table.rho, 0, table.k), {table.j})
    return [(x - g - P0 @ x).coeffs for x, g in zip(xs, gs)]


def inverse_identity_residual(P: EpsSeries, U: list[np.ndarray]) -> list[np.ndarray]:
    """``sum_q (I delta_q0 - P[q]) U[n - q] - delta_n0 I`` for ``n = 0..len(U) - 1``."""
    n = P.shape[0]
    out = []
    for m in range(len(U)):
        acc = U[m].copy()
        for q in range(m + 1):
            acc -= P.coeffs[q] @ U[m - q]
        if m == 0:
            acc -= np.eye(n)
        out.append(acc)
    return out
