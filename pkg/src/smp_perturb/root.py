"""Root of the characteristic equation ``phi_ii(rho) = 1``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hitting import NotFinite, solve_phi
from .model import SemiMarkovModel

BISECT_TOL = 1e-14
NEWTON_STEPS = 5
RHO_CAP = 1024.0


class NoRoot(ArithmeticError):
    def __init__(self, message: str, delta_proxy: float = float("nan")):
        super().__init__(message)
        self.delta_proxy = delta_proxy


@dataclass
class RootResult:
    rho_root: float
    residual: float
    per_state_roots: np.ndarray
    delta_proxy: float
    reference_state: int = 1


def _phi_ii(model, eps, rho, i):
    try:
        return float(solve_phi(model, eps, rho, i).phi[0, i - 1])
    except NotFinite:
        return None


def _state_root(model: SemiMarkovModel, eps: float, i: int) -> tuple[float, float, float]:
    """Root for state ``i`` as ``(rho, phi_ii(rho) - 1, delta_proxy)``."""
    f0 = _phi_ii(model, eps, 0.0, i)
    if f0 is None:
        raise NoRoot(f"phi_{i}{i}(0) is infinite", 0.0)
    if f0 > 1.0 + 1e-12:
        raise NoRoot(f"phi_{i}{i}(0) = {f0!r} > 1", 0.0)
    if abs(f0 - 1.0) <= 1e-12:
        return 0.0, f0 - 1.0, 0.0

    # beyond this cap the weights exp(rho * k) overflow double precision
    cap = min(RHO_CAP, 700.0 / model.k_max)
    lo, hi, b = 0.0, None, 1.0
    finite_max = 0.0
    while hi is None:
        v = _phi_ii(model, eps, b, i)
        if v is None:
            # phi grows without bound at the finiteness boundary, so look for a
            # finite point above one between the last finite point and b
            a, c = lo, b
            while c - a > BISECT_TOL * max(1.0, c):
                mid = 0.5 * (a + c)
                w = _phi_ii(model, eps, mid, i)
                if w is None:
                    c = mid
                elif w > 1.0:
                    hi = mid
                    finite_max = max(finite_max, mid)
                    break
                else:
                    a = lo = mid
                    finite_max = max(finite_max, mid)
            if hi is None:
                raise NoRoot(f"phi_{i}{i} stays below 1 up to the finiteness boundary", finite_max)
        elif v > 1.0:
            hi = b
            finite_max = max(finite_max, b)
        else:
            lo = b
            finite_max = max(finite_max, b)
            b *= 2.0
            if b > cap:
                raise NoRoot(f"phi_{i}{i} below 1 for rho <= {lo:g}", finite_max)

    while hi - lo > BISECT_TOL * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        v = _phi_ii(model, eps, mid, i)
        if v is None or v > 1.0:
            hi = mid
        else:
            lo = mid

    rho = 0.5 * (lo + hi)
    hm = solve_phi(model, eps, rho, i, R=1)
    res = hm.phi[0, i - 1] - 1.0
    for _ in range(NEWTON_STEPS):
        if res == 0.0:
            break
        d = hm.phi[1, i - 1]
        if not d > 0:
            break
        cand = rho - res / d
        try:
            hc = solve_phi(model, eps, cand, i, R=1)
        except NotFinite:
            break
        rc = hc.phi[0, i - 1] - 1.0
        if abs(rc) >= abs(res):
            break
        rho, hm, res = cand, hc, rc
    return rho, float(res), finite_max


def characteristic_root(model: SemiMarkovModel, eps: float, i: int = 1) -> RootResult:
    """Non-negative root for reference state ``i`` plus the roots for every state."""
    n = model.n_states
    if not 1 <= i <= n:
        raise ValueError(f"reference state {i} outside 1..{n}")
    rho, res, delta = _state_root(model, eps, i)
    roots = np.empty(n)
    for t in range(1, n + 1):
        if t == i:
            roots[t - 1] = rho
        else:
            roots[t - 1], _, d = _state_root(model, eps, t)
            delta = max(delta, d)
    return RootResult(rho, res, roots, delta, i)


@dataclass
class ScanPoint:
    eps: float
    result: RootResult | None = None
    error: str | None = None
    gap: float = float("nan")


def root_convergence_scan(model: SemiMarkovModel, eps_values: Sequence[float], i: int = 1) -> list[ScanPoint]:
    """Roots over an eps grid (sorted ascending) with ``|rho(eps) - rho(0)|``.

    The gap is measured against the root at ``eps = 0``, computed even when
    0 is not among ``eps_values``.  Failures are recorded per point.
    """
    points = []
    for e in sorted(float(x) for x in eps_values):
        try:
            points.append(ScanPoint(e, characteristic_root(model, e, i)))
        except (NoRoot, NotFinite, ValueError) as exc:
            points.append(ScanPoint(e, error=f"{type(exc).__name__}: {exc}"))
    base = next((p.result for p in points if p.eps == 0.0 and p.result), None)
    if base is None:
        try:
            base = characteristic_root(model, 0.0, i)
        except (NoRoot, NotFinite):
            base = None
    for p in points:
        if p.result is not None and base is not None:
            p.gap = abs(p.result.rho_root - base.rho_root)
    return points

