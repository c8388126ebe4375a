"""Power-exponential moments of the kernel at a fixed eps.

``p_ij(rho, r) = sum_k k**r * exp(rho*k) * Q_ij(k)`` is a finite sum because
holding times live on ``1..Kmax``.  From it we get the holding-time moments
``psi_i(rho, r)`` and the sojourn functionals ``varphi_i(rho, r)``, the
``r``-th rho-derivative of ``E_i sum_{n < kappa_1} exp(rho*n)``.

``varphi`` is evaluated as the finite sum
``sum_k P_i{kappa_1 = k} sum_{l < k} l**r exp(rho*l)``.  The recursion that
recovers it from ``psi`` (:func:`varphi_from_psi`) divides by ``exp(rho) - 1``
once per derivative order and loses digits for small ``|rho|``; it is kept as
an identity that the finite sum must satisfy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import comb

from .model import SemiMarkovModel, eval_kernel

#: ``|rho|`` below this is treated as exactly zero (removable singularity of varphi).
RHO_ZERO = 1e-12


def moment_weights(k_max: int, rho: float, r: int) -> np.ndarray:
    k = np.arange(1, k_max + 1, dtype=float)
    return k**r * np.exp(rho * k)


def sojourn_weights(k_max: int, rho: float, r: int) -> np.ndarray:
    """``W[k - 1] = sum_{l=0}^{k-1} l**r exp(rho*l)`` (with ``0**0 = 1``)."""
    l = np.arange(k_max, dtype=float)
    terms = (l**r if r else np.ones(k_max)) * np.exp(rho * l)
    return np.cumsum(terms)


@dataclass(frozen=True)
class MomentMatrix:
    """``p_ij(rho, r)`` for ``i = 1..N`` (rows) and ``j = 0..N`` (columns).

    ``entries`` is never modified; :attr:`block` is the ``N x N`` part over
    columns ``1..N`` with the taboo columns set to zero.
    """

    rho: float
    r: int
    entries: np.ndarray
    taboo: frozenset = frozenset()

    @property
    def n_states(self) -> int:
        return self.entries.shape[0]

    @property
    def block(self) -> np.ndarray:
        b = np.array(self.entries[:, 1:])
        for t in self.taboo:
            b[:, t - 1] = 0.0
        return b

    def column(self, j: int) -> np.ndarray:
        return np.array(self.entries[:, j])


def moment_p(model: SemiMarkovModel, eps: float, rho: float, r: int = 0, taboo: Iterable[int] = ()) -> MomentMatrix:
    if r < 0:
        raise ValueError("r must be >= 0")
    taboo = frozenset(int(t) for t in taboo)
    bad = [t for t in taboo if not 1 <= t <= model.n_states]
    if bad:
        raise ValueError(f"taboo states {bad} outside 1..{model.n_states}")
    q = eval_kernel(model, eps)
    entries = q @ moment_weights(model.k_max, rho, r)
    entries.setflags(write=False)
    return MomentMatrix(float(rho), int(r), entries, taboo)


@dataclass(frozen=True)
class SojournMoments:
    """Per-state ``psi[r, i - 1]`` and ``varphi[r, i - 1]`` for ``r = 0..R``."""

    rho: float
    psi: np.ndarray
    varphi: np.ndarray

    def hat(self, s: int, r: int, n_states: int) -> np.ndarray:
        """Vector with ``varphi_s(rho, r)`` in slot ``s`` and zeros elsewhere."""
        v = np.zeros(n_states)
        v[s - 1] = self.varphi[r, s - 1]
        return v


def varphi_from_psi(psi: np.ndarray, rho: float, R: int, psi0_minus_one: np.ndarray | None = None) -> np.ndarray:
    """Recover ``varphi(rho, 0..R)`` from ``psi(rho, 0..)``.

    For ``rho == 0`` ``psi`` must hold orders ``0..R+1``.  Works on the leading
    axis so it serves scalars, vectors and series coefficient stacks alike.
    ``psi0_minus_one`` optionally supplies ``psi(rho, 0) - 1`` computed without
    cancellation, which matters for small ``|rho|``.
    """
    psi = np.asarray(psi, dtype=float)
    out = np.zeros((R + 1,) + psi.shape[1:])
    if abs(rho) < RHO_ZERO:
        if psi.shape[0] < R + 2:
            raise ValueError("rho = 0 needs psi up to order R + 1")
        for r in range(R + 1):
            acc = psi[r + 1].copy()
            for m in range(r):
                acc -= comb(r + 1, m, exact=True) * out[m]
            out[r] = acc / (r + 1)
        return out
    em1 = np.expm1(rho)
    e = em1 + 1.0
    num = psi[0] - 1.0 if psi0_minus_one is None else psi0_minus_one
    out[0] = num / em1
    for r in range(1, R + 1):
        acc = psi[r].copy()
        for m in range(r):
            acc -= e * comb(r, m, exact=True) * out[m]
        out[r] = acc / em1
    return out


def sojourn_moments(model: SemiMarkovModel, eps: float, rho: float, R: int = 0) -> SojournMoments:
    if R < 0:
        raise ValueError("R must be >= 0")
    q = eval_kernel(model, eps).sum(axis=1)  # (N, K): P_i{kappa_1 = k}
    psi = np.stack([q @ moment_weights(model.k_max, rho, r) for r in range(R + 1)])
    varphi = np.stack([q @ sojourn_weights(model.k_max, rho, r) for r in range(R + 1)])
    return SojournMoments(float(rho), psi, varphi)
