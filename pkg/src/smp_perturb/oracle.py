"""Brute-force reference computations.

Nothing here touches the linear systems of :mod:`smp_perturb.hitting`.  The
hitting-time and occupation distributions are tabulated by convolution
dynamic programming over time; moments are truncated sums with a geometric
tail bound.  Expansion coefficients are estimated by polynomial fitting of
concrete-eps evaluations, either on real grids or on circles in the complex
eps plane.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import comb

from .model import SemiMarkovModel, eval_kernel

DEFAULT_N_MAX = 2000
MAX_N_MAX = 32000
TAIL_WINDOW = 20
UNDERFLOW = 1e-280


class TailNotCertified(ArithmeticError):
    """The tabulated sequence does not yet decay geometrically at ``n_max``."""


class IllConditioned(ArithmeticError):
    pass


@dataclass(frozen=True)
class SeriesTable:
    """``values[..., n]`` for ``n = 0..n_max``.

    ``g`` tables are indexed ``[i - 1, n]``; ``h`` tables ``[i - 1, n]`` for a
    fixed target ``j`` and occupied state ``s``.  ``support_end`` is the last
    time at which the whole DP state is non-zero (``-1`` if never); when it
    lies more than ``lag`` steps before ``n_max`` the sequence has finite
    support and the tail is exactly zero.
    """

    values: np.ndarray
    n_max: int
    lag: int
    support_end: int

    @property
    def finite_support(self) -> bool:
        return self.support_end < self.n_max - self.lag


def _taboo_steps(q: np.ndarray, targets: list[int]) -> np.ndarray:
    """Per-target step matrices ``Pt[t, k - 1] = Q(k)`` restricted to ``1..N`` with target column zeroed."""
    n, _, K = q.shape
    base = np.moveaxis(q[:, 1:, :], 2, 0)  # (K, N, N)
    Pt = np.repeat(base[None], len(targets), axis=0)
    for t, j in enumerate(targets):
        Pt[t, :, :, j - 1] = 0.0
    return Pt


def _support_end(arr: np.ndarray) -> int:
    nz = np.nonzero(np.any(arr.reshape(-1, arr.shape[-1]) != 0, axis=0))[0]
    return int(nz[-1]) if len(nz) else -1


def dp_g_all(model: SemiMarkovModel, eps: float, n_max: int) -> np.ndarray:
    """``g[j - 1, i - 1, n] = P_i{mu_j = n, nu_0 > nu_j}`` for all targets."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    q = eval_kernel(model, eps)
    N, _, K = q.shape
    targets = list(range(1, N + 1))
    Pt = _taboo_steps(q, targets)  # (J, K, N, N)
    direct = np.zeros((N, N, n_max + 1))  # [j, i, n] = Q_ij(n)
    m = min(K, n_max)
    direct[:, :, 1 : m + 1] = np.moveaxis(q[:, 1:, :m], 1, 0)
    # time index m stored at column m + K so that the K preceding columns exist
    G = np.zeros((N, N, n_max + 1 + K))
    for n in range(1, n_max + 1):
        window = G[:, :, n : n + K][..., ::-1]  # times n-1, n-2, ..., n-K
        G[:, :, n + K] = direct[:, :, n] + np.einsum("jkab,jbk->ja", Pt, window)
    return G[:, :, K:]


def dp_g(model: SemiMarkovModel, eps: float, j: int, n_max: int = DEFAULT_N_MAX) -> SeriesTable:
    allg = dp_g_all(model, eps, n_max)
    return SeriesTable(allg[j - 1], n_max, model.k_max * model.n_states, _support_end(allg[j - 1]))


def _survival(q: np.ndarray, n_max: int) -> np.ndarray:
    """``S[i - 1, n] = P_i{kappa_1 > n}``."""
    pk = q.sum(axis=1)  # (N, K)
    N, K = pk.shape
    tail = 1.0 - np.concatenate([np.zeros((N, 1)), np.cumsum(pk, axis=1)], axis=1)  # n = 0..K
    tail = np.clip(tail, 0.0, None)
    tail[:, K] = 0.0
    S = np.zeros((N, n_max + 1))
    m = min(K, n_max)
    S[:, : m + 1] = tail[:, : m + 1]
    return S


def dp_h_all(model: SemiMarkovModel, eps: float, n_max: int) -> np.ndarray:
    """``h[j - 1, s - 1, i - 1, n] = P_i{xi(n) = s, mu_0 ^ mu_j > n}``."""
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    q = eval_kernel(model, eps)
    N, _, K = q.shape
    Pt = _taboo_steps(q, list(range(1, N + 1)))
    S = _survival(q, n_max)
    H = np.zeros((N, N, N, n_max + 1 + K))
    eye = np.eye(N)
    for n in range(0, n_max + 1):
        window = H[:, :, :, n : n + K][..., ::-1]
        first = eye * S[:, n][None, :]  # [s, i] = delta(i, s) S_i(n)
        H[:, :, :, n + K] = first[None] + np.einsum("jkab,jsbk->jsa", Pt, window)
    return H[..., K:]


def dp_h(model: SemiMarkovModel, eps: float, j: int, s: int, n_max: int = DEFAULT_N_MAX) -> SeriesTable:
    allh = dp_h_all(model, eps, n_max)
    return SeriesTable(allh[j - 1, s - 1], n_max, model.k_max * model.n_states, _support_end(allh[j - 1]))


def tail_bound(values: np.ndarray, rho: float, r: int, lag: int, finite_support: bool = False) -> float:
    """Geometric bound on ``sum_{n > n_max} n**r exp(rho*n) v(n)``.

    Uses the running maximum over ``lag`` steps so that periodic sequences
    (zeros at some times) still show a clean decay ratio.
    """
    v = np.abs(np.asarray(values, dtype=float))
    if finite_support:
        return 0.0
    # fast-decaying tables reach subnormal values whose ratios are noise;
    # certify from the last entry that is still well above underflow
    alive = np.nonzero(v > UNDERFLOW)[0]
    if len(alive) and alive[-1] < len(v) - 1 and np.any(v[alive[-1] + 1 :] > 0):
        v = v[: alive[-1] + 1]
    n_max = len(v) - 1
    need = TAIL_WINDOW + 2 * lag
    if n_max < need:
        raise TailNotCertified(f"table too short ({n_max}) for the tail window")
    tailpart = v[-need:]
    if not np.any(tailpart):
        return 0.0
    env = np.array([tailpart[max(0, t - lag + 1) : t + 1].max() for t in range(len(tailpart))])
    cur = env[-TAIL_WINDOW:]
    prev = env[-TAIL_WINDOW - lag : -lag]
    if np.any((prev == 0) & (cur > 0)):
        raise TailNotCertified("sequence not decaying at n_max")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(prev > 0, cur / prev, 0.0)
    q = float(ratios.max()) ** (1.0 / lag)
    if not q < 1.0:
        raise TailNotCertified(f"decay ratio {q:.6g} >= 1 at n_max={n_max}")
    x = q * np.exp(rho + r / n_max)
    if not x < 1.0:
        raise TailNotCertified(f"rho={rho} too large for decay ratio {q:.6g}")
    with np.errstate(over="ignore"):
        last = env[-1] * q ** (-lag) * float(n_max) ** r * np.exp(rho * n_max)
        bound = last * x / (1.0 - x)
    if not np.isfinite(bound):
        raise TailNotCertified("tail bound overflow")
    return float(bound)


def series_moment(table: SeriesTable, rho: float, r: int, index=()) -> tuple[float, float]:
    """``(sum_{n <= n_max} n**r exp(rho*n) v(n), tail bound)`` for one row of ``table``."""
    v = table.values[index] if index != () else table.values
    if v.ndim != 1:
        raise ValueError("select a single sequence with `index`")
    return weighted_sum(v, rho, r), tail_bound(v, rho, r, table.lag, table.finite_support)


def weighted_sum(v: np.ndarray, rho: float, r: int) -> float:
    """``sum_n n**r exp(rho*n) v(n)`` with the exponential taken in log space."""
    v = np.asarray(v, dtype=float)
    nz = np.nonzero(v)[0]
    if len(nz) == 0:
        return 0.0
    n = nz.astype(float)
    vv = v[nz]
    with np.errstate(over="ignore"):
        terms = np.sign(vv) * np.exp(rho * n + np.log(np.abs(vv))) * n**r
    return float(terms.sum())


class OracleMoments:
    """Certified truncated moments for every ``(i, j)`` and ``(i, j, s)`` at one eps.

    Tables start at ``n_max = 2000`` and are doubled up to 32000 when a tail
    cannot be certified.
    """

    def __init__(self, model: SemiMarkovModel, eps: float, n_max: int = DEFAULT_N_MAX):
        self.model, self.eps = model, eps
        self._build(n_max)

    def _build(self, n_max: int):
        self.n_max = n_max
        self.g = dp_g_all(self.model, self.eps, n_max)
        self.h = dp_h_all(self.model, self.eps, n_max)
        self.lag = self.model.k_max * self.model.n_states
        self.g_finite = [_support_end(self.g[j]) < n_max - self.lag for j in range(self.model.n_states)]
        self.h_finite = [_support_end(self.h[j]) < n_max - self.lag for j in range(self.model.n_states)]

    def _moment(self, v, rho, r, finite):
        return weighted_sum(v, rho, r), tail_bound(v, rho, r, self.lag, finite)

    def _retry(self, fn):
        while True:
            try:
                return fn()
            except TailNotCertified:
                if self.n_max * 2 > MAX_N_MAX:
                    raise
                self._build(self.n_max * 2)

    def phi(self, i: int, j: int, rho: float, r: int) -> tuple[float, float]:
        return self._retry(lambda: self._moment(self.g[j - 1, i - 1], rho, r, self.g_finite[j - 1]))

    def omega(self, i: int, j: int, s: int, rho: float, r: int) -> tuple[float, float]:
        return self._retry(lambda: self._moment(self.h[j - 1, s - 1, i - 1], rho, r, self.h_finite[j - 1]))


def trajectory_probs(model: SemiMarkovModel, eps: float, n_max: int) -> np.ndarray:
    """``P[i - 1, j - 1, n] = P_i{xi(n) = j, mu_0 > n}`` by stepping the (state, age) chain.

    The age is the time since the last jump.  From ``(l, a)`` the process
    jumps to ``m`` with probability ``Q_lm(a + 1) / P_l{kappa > a}``; jumps to
    state 0 leave the tracked mass.
    """
    q = eval_kernel(model, eps)
    N, _, K = q.shape
    S = _survival(q, K)  # (N, K+1): S[:, a] = P{kappa > a}
    with np.errstate(divide="ignore", invalid="ignore"):
        hazard = np.where(S[:, :K, None] > 0, np.moveaxis(q[:, 1:, :], 2, 1) / S[:, :K, None], 0.0)  # [l, a, m]
        stay = np.where(S[:, :K] > 0, S[:, 1 : K + 1] / S[:, :K], 0.0)  # [l, a]
    out = np.zeros((N, N, n_max + 1))
    x = np.zeros((N, N, K))  # [start, state, age]
    x[np.arange(N), np.arange(N), 0] = 1.0
    out[:, :, 0] = x.sum(axis=2)
    for n in range(1, n_max + 1):
        new = np.zeros_like(x)
        new[:, :, 0] = np.einsum("sla,lam->sm", x, hazard)
        new[:, :, 1:] = x[:, :, :-1] * stay[None, :, :-1]
        x = new
        out[:, :, n] = x.sum(axis=2)
    return out


def renewal_residual(model: SemiMarkovModel, eps: float, n_max: int = 50) -> np.ndarray:
    """``P_ij(n) - h_iij(n) - sum_{k=1..n} g_ii(k) P_ij(n - k)`` for all ``i, j``, ``n <= n_max``."""
    P = trajectory_probs(model, eps, n_max)
    g = dp_g_all(model, eps, n_max)
    h = dp_h_all(model, eps, n_max)
    N = model.n_states
    res = np.zeros_like(P)
    for i in range(N):
        gii = g[i, i]
        for j in range(N):
            for n in range(n_max + 1):
                conv = sum(gii[k] * P[i, j, n - k] for k in range(1, n + 1))
                res[i, j, n] = P[i, j, n] - h[i, j, i, n] - conv
    return res


@dataclass(frozen=True)
class FitResult:
    coeffs: np.ndarray
    condition: float
    grid: np.ndarray


def fd_expansion_coeffs(
    evaluator: Callable[[float], np.ndarray | float],
    k: int,
    eps_max: float,
    degree: int | None = None,
    h: float | None = None,
) -> FitResult:
    """Estimate the first ``k + 1`` eps-coefficients of ``evaluator`` by polynomial fitting.

    The grid is ``m*h`` for ``m = 0..k+2`` with ``h = eps_max/32`` unless
    given.  The fit
    degree defaults to ``k + 2`` (interpolation through all grid points); a
    plain degree-``k`` fit is biased by ``~6*h`` times the next coefficient.
    The fit is done in the scaled variable ``eps/h``; its Vandermonde
    condition number is the reported diagnostic.
    """
    if degree is None:
        degree = k + 2
    if degree < k:
        raise ValueError("fit degree must be >= k")
    if h is None:
        h = eps_max / 32.0
    m = np.arange(k + 3, dtype=float)
    grid = m * h
    vals = np.array([np.asarray(evaluator(float(e)), dtype=float) for e in grid])
    shape = vals.shape[1:]
    V = m[:, None] ** np.arange(degree + 1)[None, :]
    cond = float(np.linalg.cond(V))
    if cond > 1e10:
        raise IllConditioned(f"fit condition number {cond:.3g} > 1e10")
    c, *_ = np.linalg.lstsq(V, vals.reshape(len(grid), -1), rcond=None)
    c = c / (h ** np.arange(degree + 1))[:, None]
    return FitResult(c[: k + 1].reshape((k + 1,) + shape), cond, grid)


def chebyshev_fit_coeffs(
    evaluator: Callable[[float], np.ndarray | float],
    k: int,
    width: float,
    n_points: int | None = None,
    degree: int | None = None,
) -> FitResult:
    """Least-squares fit on ``eps = 0`` plus Chebyshev nodes of ``[0, width]``.

    Clustering the nodes towards the ends keeps the fit well conditioned, and
    the surplus of points over the degree averages out rounding noise.
    Defaults: ``degree = k + 2`` and ``n_points = 4 * (k + 3)``.
    """
    if degree is None:
        degree = k + 2
    if n_points is None:
        n_points = 4 * (k + 3)
    x = 0.5 * (1.0 - np.cos(np.pi * (np.arange(n_points) + 0.5) / n_points))
    x = np.concatenate([[0.0], x])
    grid = width * x
    vals = np.array([np.asarray(evaluator(float(e)), dtype=float) for e in grid])
    shape = vals.shape[1:]
    V = x[:, None] ** np.arange(degree + 1)[None, :]
    cond = float(np.linalg.cond(V))
    if cond > 1e10:
        raise IllConditioned(f"fit condition number {cond:.3g} > 1e10")
    c, *_ = np.linalg.lstsq(V, vals.reshape(len(grid), -1), rcond=None)
    c = c / (width ** np.arange(degree + 1))[:, None]
    return FitResult(c[: k + 1].reshape((k + 1,) + shape), cond, grid)


def refined_expansion_coeffs(
    evaluator: Callable[[float], np.ndarray | float],
    k: int,
    eps_max: float,
    levels: int = 6,
) -> FitResult:
    """Polynomial-fit coefficients with the fit window chosen per coefficient.

    Fits :func:`chebyshev_fit_coeffs` on ``[0, eps_max / 2**l]`` for
    ``l = 0..levels``.  The truncation error of coefficient ``n`` falls like
    ``width**(k + 3 - n)`` while rounding grows like ``width**-n``, so small
    high-order coefficients need wide windows and near-singular models need
    narrow ones.  For each coefficient entry the level whose estimate differs
    least from its neighbouring levels (the plateau) is kept.
    """
    fits = [chebyshev_fit_coeffs(evaluator, k, eps_max / 2**l) for l in range(levels + 1)]
    c = np.stack([f.coeffs for f in fits])  # (levels + 1, k + 1, ...)
    step = np.abs(np.diff(c, axis=0))
    spread = np.empty_like(c)
    spread[0] = step[0]
    spread[-1] = step[-1]
    spread[1:-1] = np.maximum(step[:-1], step[1:])
    best = np.argmin(spread, axis=0)
    out = np.take_along_axis(c, best[None], axis=0)[0]
    grid = np.unique(np.concatenate([f.grid for f in fits]))
    return FitResult(out, max(f.condition for f in fits), grid)


def complex_functionals(model: SemiMarkovModel, eps: complex, rho: float, j: int, R: int) -> np.ndarray:
    """``[Phi_j, omega_j1, ..., omega_jN]`` at a complex ``eps``, shape ``(1 + N, R + 1, N)``.

    A direct dense solve of the taboo systems with the kernel polynomials
    evaluated off the real axis, for contour fits.  Derivative orders follow
    from differentiating ``x = b + jP x`` ``r`` times in ``rho``.
    """
    c = model.kernel.coeffs
    q = np.zeros(c.shape[1:], dtype=complex)
    for a in c[::-1]:
        q = q * eps + a
    N, K = model.n_states, model.k_max
    k = np.arange(1, K + 1, dtype=float)
    l = np.arange(K, dtype=float)
    P, b_phi, soj = [], [], []
    for r in range(R + 1):
        p = q @ (k**r * np.exp(rho * k))  # (N, N + 1)
        b_phi.append(p[:, j].copy())
        blk = p[:, 1:].copy()
        blk[:, j - 1] = 0.0
        P.append(blk)
        soj.append(q.sum(axis=1) @ np.cumsum(l**r * np.exp(rho * l)))
    A = np.eye(N) - P[0]

    def chain(rhs):
        xs = []
        for r in range(R + 1):
            g = rhs[r] + sum(comb(r, m, exact=True) * (P[m] @ xs[r - m]) for m in range(1, r + 1))
            xs.append(np.linalg.solve(A, g))
        return np.stack(xs)

    out = [chain(b_phi)]
    for s in range(1, N + 1):
        rhs = []
        for r in range(R + 1):
            v = np.zeros(N, dtype=complex)
            v[s - 1] = soj[r][s - 1]
            rhs.append(v)
        out.append(chain(rhs))
    return np.stack(out)


def contour_expansion_coeffs(
    evaluator: Callable[[complex], np.ndarray],
    k: int,
    radius: float,
    n_points: int = 32,
) -> FitResult:
    """First ``k + 1`` Taylor coefficients by interpolation on ``|eps| = radius``.

    The interpolating polynomial at ``n_points`` equally spaced points of the
    circle has its coefficients given by a discrete Fourier transform, so the
    fit is perfectly conditioned.  Rounding enters coefficient ``n`` as about
    ``u * max|f| / radius**n``; aliasing adds ``a[n + n_points] * radius**n_points``.
    """
    if n_points <= k:
        raise ValueError("need more contour points than coefficients")
    grid = radius * np.exp(2j * np.pi * np.arange(n_points) / n_points)
    vals = np.array([np.asarray(evaluator(complex(e))) for e in grid])
    c = np.fft.fft(vals, axis=0)[: k + 1] / n_points
    c = c / (radius ** np.arange(k + 1)).reshape((k + 1,) + (1,) * (vals.ndim - 1))
    return FitResult(c.real, 1.0, grid)


def refined_contour_coeffs(
    evaluator: Callable[[complex], np.ndarray],
    k: int,
    eps_max: float,
    levels: int = 4,
    n_points: int = 32,
) -> FitResult:
    """Contour fits on radii ``eps_max / 2**l``, choosing the plateau per entry.

    A wide circle minimises rounding but may reach a singularity of the
    functionals (a point where the taboo system is singular); such levels
    are dropped.
    """
    fits = []
    for l in range(levels + 1):
        try:
            with np.errstate(all="ignore"):
                f = contour_expansion_coeffs(evaluator, k, eps_max / 2**l, n_points)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(f.coeffs)):
            fits.append(f)
    if not fits:
        raise IllConditioned("no contour radius gave finite values")
    if len(fits) == 1:
        return fits[0]
    c = np.stack([f.coeffs for f in fits])
    step = np.abs(np.diff(c, axis=0))
    spread = np.empty_like(c)
    spread[0] = step[0]
    spread[-1] = step[-1]
    spread[1:-1] = np.maximum(step[:-1], step[1:])
    best = np.argmin(spread, axis=0)
    out = np.take_along_axis(c, best[None], axis=0)[0]
    return FitResult(out, 1.0, np.concatenate([f.grid for f in fits]))
