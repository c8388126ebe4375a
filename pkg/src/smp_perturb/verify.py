"""Cross-checks between the linear-system engine and independent references.

Each ``check_*`` function returns a list of :class:`Check` records; nothing
raises on a failed comparison.  ``run_suite`` bundles the checks used by the
``verify`` command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .expansions import (
    inverse_expansion,
    inverse_identity_residual,
    omega_expansion,
    p_expansion,
    phi_expansion,
    system_residual,
    taboo_series,
)
from .hitting import (
    NotFinite,
    divergence_threshold,
    finiteness_check,
    hitting_moments,
    occupation_total,
    solidarity_residual,
    solve_omega,
    solve_phi,
)
from .model import SemiMarkovModel
from .oracle import OracleMoments, TailNotCertified, complex_functionals, refined_contour_coeffs, renewal_residual
from .root import NoRoot, characteristic_root


@dataclass
class Check:
    name: str
    passed: bool
    residual: float
    tol: float
    detail: str = ""


def _check(name, residual, tol, detail=""):
    residual = float(residual)
    return Check(name, bool(residual <= tol), residual, tol, detail)


def rel_err(a: np.ndarray, b: np.ndarray, ref: float = 0.0) -> float:
    """Norm-wise relative error ``max|a - b| / max|b|``.

    Vectors of hitting functionals carry structural zeros (e.g. ``omega_ijj``
    for ``i != j``, and every derivative of ``omega_jjj``), so entry-wise
    ratios would divide rounding noise by zero.  When ``b`` itself is at
    rounding level relative to ``ref`` (the size of the underlying
    undifferentiated quantity), the error is measured against ``ref``.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = float(np.max(np.abs(b)))
    if scale <= 1e-12 * ref:
        scale = ref
    diff = float(np.max(np.abs(a - b)))
    if scale == 0.0:
        return diff
    return diff / scale


def central_differences(f, x: float, h: float):
    """First and second derivatives of ``f`` at ``x`` from central differences.

    Richardson extrapolation over steps ``h`` and ``2h`` cancels the ``h**2``
    term and leaves an ``O(h**4)`` truncation error.  A plain central
    difference at ``h = 1e-4`` is off by about ``h**2 * f3 / 6`` (``f3`` the
    third derivative), which exceeds ``1e-6 |f'|`` once hitting times reach a
    few tens of steps.
    """
    f0 = f(x)
    fp1, fm1, fp2, fm2 = f(x + h), f(x - h), f(x + 2 * h), f(x - 2 * h)
    d1h = (fp1 - fm1) / (2 * h)
    d12 = (fp2 - fm2) / (4 * h)
    d2h = (fp1 - 2 * f0 + fm1) / h**2
    d22 = (fp2 - 2 * f0 + fm2) / (4 * h**2)
    return (4 * d1h - d12) / 3, (4 * d2h - d22) / 3


def check_oracle(model: SemiMarkovModel, eps: float, rhos, R: int = 2, slack: float = 1e-9) -> list[Check]:
    """``|system - truncated series| <= tail bound + slack`` for all ``phi_ij`` and ``omega_ijs``."""
    N = model.n_states
    orc = OracleMoments(model, eps)
    worst, where = -np.inf, ""
    for rho in rhos:
        for j in range(1, N + 1):
            hm = hitting_moments(model, eps, rho, j, R)
            for r in range(R + 1):
                for i in range(1, N + 1):
                    val, tail = orc.phi(i, j, rho, r)
                    d = abs(hm.phi[r, i - 1] - val) - tail - slack
                    if d > worst:
                        worst, where = d, f"phi i={i} j={j} rho={rho:.6g} r={r}"
                    for s in range(1, N + 1):
                        val, tail = orc.omega(i, j, s, rho, r)
                        d = abs(hm.omega[s][r, i - 1] - val) - tail - slack
                        if d > worst:
                            worst, where = d, f"omega i={i} j={j} s={s} rho={rho:.6g} r={r}"
    return [Check("oracle equivalence", bool(worst <= 0), worst + slack, slack, where)]


def check_derivatives(model: SemiMarkovModel, eps: float, rho: float, h: float = 1e-4, tol: float = 1e-6) -> list[Check]:
    """``r = 1, 2`` solutions vs central differences of the ``r = 0`` solution in ``rho``.

    Steps shrink with the time scale ``T = |f''| / |f'|`` of the functionals:
    ``min(h, 0.1 h0 / T)`` for the first derivative and ``min(10 h, h0 / T)``
    for the second (``h0 = 1e-2``), whose rounding error grows like
    ``cond * u / h**2``.
    """
    N = model.n_states
    worst = 0.0
    for j in range(1, N + 1):
        mid = hitting_moments(model, eps, rho, j, 2)
        exact = [mid.phi] + [mid.omega[s] for s in range(1, N + 1)]
        T = max(float(np.max(np.abs(ex[2]))) / max(float(np.max(np.abs(ex[1]))), 1e-300) for ex in exact)
        T = max(T, 1.0)

        def stacked(x, j=j):
            hm = hitting_moments(model, eps, x, j, 0)
            return np.stack([hm.phi[0]] + [hm.omega[s][0] for s in range(1, N + 1)])

        d1, _ = central_differences(stacked, rho, min(h, 1e-3 / T))
        _, d2 = central_differences(stacked, rho, min(10 * h, 1e-2 / T))
        for q, ex in enumerate(exact):
            ref = float(np.max(np.abs(ex[0])))
            worst = max(worst, rel_err(d1[q], ex[1], ref), rel_err(d2[q], ex[2], ref))
    return [_check("derivative systems", worst, tol, f"rho={rho:.6g}")]


def check_solidarity(model: SemiMarkovModel, eps: float, rho: float, tol: float = 1e-10) -> list[Check]:
    N = model.n_states
    worst = 0.0
    for i in range(1, N + 1):
        for j in range(1, N + 1):
            worst = max(worst, abs(solidarity_residual(model, eps, rho, i, j)))
    return [_check("solidarity relation", worst, tol, f"rho={rho:.6g}")]


def check_occupation_sum(model: SemiMarkovModel, eps: float, rho: float, tol: float = 1e-9) -> list[Check]:
    N = model.n_states
    worst = 0.0
    for j in range(1, N + 1):
        om = solve_omega(model, eps, rho, j, range(1, N + 1))
        total = sum(om.omega[s][0] for s in range(1, N + 1))
        ref = occupation_total(model, eps, rho, j)
        worst = max(worst, float(np.max(np.abs(total - ref) / np.maximum(1.0, np.abs(ref)))))
    return [_check("occupation-sum identity", worst, tol, f"rho={rho:.6g}")]


def check_roots(model: SemiMarkovModel, eps: float, tol: float = 1e-10) -> tuple[list[Check], float | None]:
    try:
        res = characteristic_root(model, eps)
    except NoRoot as exc:
        return [Check("characteristic root", False, math.inf, tol, str(exc))], None
    spread = float(np.max(np.abs(res.per_state_roots - res.rho_root)))
    resid = 0.0
    for i in range(1, model.n_states + 1):
        phi = solve_phi(model, eps, res.per_state_roots[i - 1], i).phi[0, i - 1]
        resid = max(resid, abs(phi - 1.0))
    return [
        _check("root residual", resid, 1e-12),
        _check("per-state roots agree", spread, tol),
    ], res.rho_root


def finiteness_route_agreement(model: SemiMarkovModel, eps: float, rho: float) -> dict:
    """Finiteness verdicts of the three routes (plus eigenvalues) for every target."""
    out = {}
    for j in range(1, model.n_states + 1):
        fc = finiteness_check(model, eps, rho, j).invertible
        try:
            solve_phi(model, eps, rho, j)
            ph = True
        except NotFinite:
            ph = False
        try:
            solve_omega(model, eps, rho, j, range(1, model.n_states + 1))
            om = True
        except NotFinite:
            om = False
        out[j] = (fc, ph, om)
    return out


def expansion_fit_error(model: SemiMarkovModel, rho: float, j: int, k: int) -> float:
    """Worst relative deviation between recursive coefficients and the polynomial-fit oracle.

    The oracle interpolates direct solves on circles in the complex eps plane
    (:func:`~smp_perturb.oracle.refined_contour_coeffs`); real-axis fits on
    ``[0, eps_max]`` cannot resolve high-order coefficients whose contribution
    there is below rounding.  Covers ``Phi_j`` and ``omega_js`` for every ``s``
    and ``r = 0..k``; one fit of order ``k`` serves all tables, of which the
    ``r``-th uses the first ``k - r + 1`` coefficients.  Errors are norm-wise over states for each
    coefficient index ``n``.  A coefficient vector at rounding level (a
    structural zero such as ``omega_jjj`` for ``r >= 1``) is compared against
    the largest coefficient entering its recursion: any table at order ``r``
    or at order 0.
    """
    N = model.n_states
    tables = [phi_expansion(model, rho, j, k).phi]
    tables += [omega_expansion(model, rho, j, s, k).omega for s in range(1, N + 1)]
    fit = refined_contour_coeffs(
        lambda e: complex_functionals(model, e, rho, j, k), k, model.eps_max
    ).coeffs  # (k + 1, 1 + N, k + 1, N)
    # magnitude of everything entering the order-r recursion
    ref = [max(float(np.max(np.abs(t[r].coeffs))) for t in tables) for r in range(k + 1)]
    worst = 0.0
    for t, table in enumerate(tables):
        for r in range(k + 1):
            c = table[r].coeffs
            big = max(float(np.max(np.abs(c))), ref[0], ref[r])
            for n in range(len(c)):
                worst = max(worst, rel_err(fit[n, t, r], c[n], big))
    return worst


def check_expansions(model: SemiMarkovModel, rho: float, k: int, fit: bool = True) -> list[Check]:
    N = model.n_states
    res_worst, id_worst, zero_worst, fit_worst = 0.0, 0.0, 0.0, 0.0
    for j in range(1, N + 1):
        pt = phi_expansion(model, rho, j, k)
        for r, coeffs in enumerate(system_residual(model, pt)):
            scale = 1.0 + np.max(np.abs(pt.phi[r].coeffs), axis=1)
            res_worst = max(res_worst, float(np.max(np.abs(coeffs).max(axis=1) / scale)))
        P = taboo_series(p_expansion(model, rho, 0, k), {j})
        U = inverse_expansion(P, k)
        id_worst = max(id_worst, max(float(np.max(np.abs(x))) for x in inverse_identity_residual(P, U)))
        hm0 = hitting_moments(model, 0.0, rho, j, k)
        zero_worst = max(zero_worst, rel_err(np.stack([p.coeffs[0] for p in pt.phi]), hm0.phi))
        for s in range(1, N + 1):
            ot = omega_expansion(model, rho, j, s, k)
            for r, coeffs in enumerate(system_residual(model, ot)):
                scale = 1.0 + np.max(np.abs(ot.omega[r].coeffs), axis=1)
                res_worst = max(res_worst, float(np.max(np.abs(coeffs).max(axis=1) / scale)))
            zero_worst = max(zero_worst, rel_err(np.stack([w.coeffs[0] for w in ot.omega]), hm0.omega[s]))
        if fit:
            fit_worst = max(fit_worst, expansion_fit_error(model, rho, j, k))
    out = [
        _check("expansion order-by-order residual", res_worst, 1e-9, f"rho={rho:.6g} k={k}"),
        _check("inverse-expansion identity", id_worst, 1e-10, f"k={k}"),
        _check("zeroth coefficients equal eps=0 solve", zero_worst, 1e-10, f"k={k}"),
    ]
    if fit:
        out.append(_check("polynomial-fit oracle", fit_worst, 1e-4, f"k={k}"))
    return out


def check_finiteness_routes(model: SemiMarkovModel, eps: float, rho: float) -> list[Check]:
    bad = 0
    for j, verdicts in finiteness_route_agreement(model, eps, rho).items():
        if len(set(verdicts)) != 1:
            bad += 1
    return [_check("finiteness routes agree", bad, 0, f"rho={rho:.6g}")]


def run_suite(model: SemiMarkovModel, eps: float | None = None, k: int = 2, fit: bool = True, oracle: bool = True) -> list[Check]:
    """All property checks for one model at one eps (default ``eps_max / 2``)."""
    if eps is None:
        eps = model.eps_max / 2
    checks: list[Check] = []
    root_checks, root = check_roots(model, eps)
    checks += root_checks
    rho_half = 0.5 * root if root else 0.0
    rhos = sorted({0.0, rho_half})
    if oracle:
        try:
            checks += check_oracle(model, eps, rhos)
        except TailNotCertified as exc:
            checks.append(Check("oracle equivalence", False, math.inf, 1e-9, f"tail not certified: {exc}"))
    for rho in rhos:
        checks += check_derivatives(model, eps, rho)
        checks += check_solidarity(model, eps, rho)
    if root:
        checks += check_solidarity(model, eps, root)
    checks += check_occupation_sum(model, eps, rho_half if rho_half else 0.1 * (root or 1.0) + 0.01)
    # expansions are taken around eps = 0, so rho must keep the functionals
    # finite there as well
    try:
        root0 = characteristic_root(model, 0.0).rho_root
    except NoRoot:
        root0 = root
    rho_exp = 0.5 * min(r for r in (root, root0) if r is not None) if root else 0.0
    checks += check_expansions(model, rho_exp, k, fit=fit)
    thr = min(divergence_threshold(model, eps, j) for j in range(1, model.n_states + 1))
    if np.isfinite(thr):
        for rho in (0.8 * thr, 1.2 * thr):
            checks += check_finiteness_routes(model, eps, rho)
    res = np.abs(renewal_residual(model, eps, 50)).max()
    checks.append(_check("renewal equation", res, 1e-12))
    return checks
