"""Perturbed discrete-time semi-Markov models.

States are ``0, 1, ..., N``.  State 0 is the exit state; only rows
``i = 1..N`` of the kernel are modelled.  The kernel ``Q_ij(k)`` (probability
of jumping from ``i`` to ``j`` with holding time ``k``) is given for every
``(i, j, k)`` as an exact polynomial in ``eps`` on ``[0, eps_max]``.

Coefficients are stored densely as an array of shape
``(degree + 1, N, N + 1, Kmax)`` indexed ``[n, i - 1, j, k - 1]``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .series import EpsPoly

logger = logging.getLogger(__name__)

#: Tolerance for row-sum conservation and the [0, 1] range of kernel entries.
KERNEL_TOL = 1e-12


class ModelError(Exception):
    """Base class for model problems."""


class ModelParseError(ModelError):
    """The model file is malformed."""


class ModelValidationError(ModelError):
    """A kernel invariant is violated.

    Attributes
    ----------
    invariant : str
        Name of the first violated invariant.
    location : dict
        The offending ``i``, ``j``, ``k`` (where meaningful) and ``eps``.
    """

    def __init__(self, invariant: str, location: dict, detail: str = ""):
        self.invariant = invariant
        self.location = location
        loc = ", ".join(f"{k}={v}" for k, v in location.items())
        msg = f"{invariant} violated at {loc}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass(frozen=True)
class PerturbedKernel:
    """The family ``Q_ij^(eps)(k)`` as polynomials in ``eps``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 4 or c.shape[2] != c.shape[1] + 1:
            raise ValueError(f"kernel coefficients must have shape (d+1, N, N+1, Kmax), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("kernel coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n_states(self) -> int:
        return self.coeffs.shape[1]

    @property
    def k_max(self) -> int:
        return self.coeffs.shape[3]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    def q(self, i: int, j: int, k: int) -> EpsPoly:
        """Polynomial for ``Q_ij(k)``; ``k = 0`` is identically zero."""
        if k == 0 or k > self.k_max:
            return EpsPoly([0.0])
        return EpsPoly(self.coeffs[:, i - 1, j, k - 1])

    def coefficients(self, order: int) -> np.ndarray:
        """Coefficient array zero-padded (or cut) to ``order + 1`` powers."""
        d = self.degree
        if order <= d:
            return self.coeffs[: order + 1]
        pad = np.zeros((order - d,) + self.coeffs.shape[1:])
        return np.concatenate([self.coeffs, pad], axis=0)

    def __call__(self, eps: float) -> np.ndarray:
        out = np.zeros(self.coeffs.shape[1:])
        for c in self.coeffs[::-1]:
            out = out * eps + c
        return out


@dataclass(frozen=True)
class SemiMarkovModel:
    kernel: PerturbedKernel
    eps_max: float
    label: str = ""

    @property
    def n_states(self) -> int:
        return self.kernel.n_states

    @property
    def k_max(self) -> int:
        return self.kernel.k_max

    def validation_grid(self, n_points: int = 5) -> np.ndarray:
        return np.linspace(0.0, self.eps_max, n_points)


@dataclass
class ConditionReport:
    a_holds: bool
    b_holds: bool
    c_holds: bool
    witnesses: dict = field(default_factory=dict)

    @property
    def all_hold(self) -> bool:
        return self.a_holds and self.b_holds and self.c_holds


# ---------------------------------------------------------------------------
# construction and validation


def make_model(
    n_states: int,
    k_max: int,
    entries: dict[tuple[int, int, int], Any],
    eps_max: float,
    label: str = "",
    n_grid: int = 5,
) -> SemiMarkovModel:
    """Build and validate a model from ``{(i, j, k): coeffs}``."""
    if int(n_states) != n_states or n_states < 1:
        raise ModelParseError(f"n_states must be a positive integer, got {n_states!r}")
    if int(k_max) != k_max or k_max < 1:
        raise ModelParseError(f"k_max must be a positive integer, got {k_max!r}")
    try:
        eps_max = float(eps_max)
    except (TypeError, ValueError) as exc:
        raise ModelParseError(f"eps_max must be a number, got {eps_max!r}") from exc
    if not np.isfinite(eps_max) or eps_max <= 0:
        raise ModelParseError(f"eps_max must be finite and > 0, got {eps_max}")
    n_states, k_max = int(n_states), int(k_max)

    polys = {}
    for (i, j, k), coeffs in entries.items():
        if not (1 <= i <= n_states):
            raise ModelParseError(f"entry i={i} outside 1..{n_states}")
        if not (0 <= j <= n_states):
            raise ModelParseError(f"entry j={j} outside 0..{n_states}")
        if not (1 <= k <= k_max):
            raise ModelParseError(f"entry k={k} outside 1..{k_max}")
        try:
            arr = np.atleast_1d(np.array(coeffs, dtype=float))
        except (TypeError, ValueError) as exc:
            raise ModelParseError(f"coefficients of ({i},{j},{k}) are not numbers") from exc
        if arr.ndim != 1 or arr.size == 0:
            raise ModelParseError(f"coefficients of ({i},{j},{k}) must be a non-empty list")
        if not np.all(np.isfinite(arr)):
            raise ModelValidationError("finite coefficients", {"i": i, "j": j, "k": k})
        polys[(i, j, k)] = arr

    degree = max((len(a) - 1 for a in polys.values()), default=0)
    c = np.zeros((degree + 1, n_states, n_states + 1, k_max))
    for (i, j, k), arr in polys.items():
        c[: len(arr), i - 1, j, k - 1] = arr

    model = SemiMarkovModel(PerturbedKernel(c), eps_max, str(label))
    check_kernel(model, n_grid)
    return model


def check_kernel(model: SemiMarkovModel, n_grid: int = 5) -> None:
    """Raise :class:`ModelValidationError` if the kernel is not stochastic on the grid.

    Invariants are checked in a fixed order (entries >= 0, entries <= 1, row sums).
    For the first invariant that fails the worst offending point is reported.
    """
    if n_grid < 2:
        raise ValueError("validation grid needs at least 2 points")
    grid = model.validation_grid(n_grid)
    vals = np.stack([model.kernel(e) for e in grid])  # (g, N, N+1, K)

    low = -vals
    if low.max() > KERNEL_TOL:
        g, i, j, k = np.unravel_index(np.argmax(low), low.shape)
        raise ModelValidationError(
            "non-negative kernel",
            {"i": int(i) + 1, "j": int(j), "k": int(k) + 1, "eps": float(grid[g])},
            f"Q = {vals[g, i, j, k]:.6g}",
        )
    high = vals - 1.0
    if high.max() > KERNEL_TOL:
        g, i, j, k = np.unravel_index(np.argmax(high), high.shape)
        raise ModelValidationError(
            "kernel entries <= 1",
            {"i": int(i) + 1, "j": int(j), "k": int(k) + 1, "eps": float(grid[g])},
            f"Q = {vals[g, i, j, k]:.6g}",
        )
    rows = vals.sum(axis=(2, 3))  # (g, N)
    dev = np.abs(rows - 1.0)
    if dev.max() > KERNEL_TOL:
        g, i = np.unravel_index(np.argmax(dev), dev.shape)
        raise ModelValidationError(
            "row-sum conservation",
            {"i": int(i) + 1, "eps": float(grid[g])},
            f"row sum = {rows[g, i]:.17g}",
        )


def _read_document(path: Path) -> Any:
    text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as json_exc:
        import yaml

        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ModelParseError(f"{path}: not valid JSON or YAML ({json_exc})") from exc
        if not isinstance(doc, dict):
            raise ModelParseError(f"{path}: not valid JSON ({json_exc})") from json_exc
        return doc


def model_from_dict(doc: dict, n_grid: int = 5) -> SemiMarkovModel:
    if not isinstance(doc, dict):
        raise ModelParseError("model document must be a mapping")
    missing = [key for key in ("n_states", "k_max", "eps_max") if key not in doc]
    if missing:
        raise ModelParseError(f"missing field(s): {', '.join(missing)}")
    raw = doc.get("entries", [])
    if not isinstance(raw, list):
        raise ModelParseError("'entries' must be a list")
    entries: dict[tuple[int, int, int], Any] = {}
    for n, e in enumerate(raw):
        if not isinstance(e, dict) or not {"i", "j", "k", "coeffs"} <= set(e):
            raise ModelParseError(f"entry #{n} needs keys i, j, k, coeffs")
        try:
            key = (int(e["i"]), int(e["j"]), int(e["k"]))
        except (TypeError, ValueError) as exc:
            raise ModelParseError(f"entry #{n}: i, j, k must be integers") from exc
        if key in entries:
            raise ModelParseError(f"duplicate entry {key}")
        entries[key] = e["coeffs"]
    return make_model(doc["n_states"], doc["k_max"], entries, doc["eps_max"], doc.get("label", ""), n_grid)


def load_model(path: str | Path, n_grid: int = 5) -> SemiMarkovModel:
    """Load and validate a model file (JSON, or YAML with the same keys)."""
    path = Path(path)
    if not path.exists():
        raise ModelParseError(f"{path}: no such file")
    model = model_from_dict(_read_document(path), n_grid)
    logger.debug("loaded model %r: N=%d Kmax=%d", model.label, model.n_states, model.k_max)
    return model


def model_to_dict(model: SemiMarkovModel) -> dict:
    c = model.kernel.coeffs
    entries = []
    for i in range(model.n_states):
        for j in range(model.n_states + 1):
            for k in range(model.k_max):
                col = c[:, i, j, k]
                if np.any(col != 0):
                    nz = np.nonzero(col)[0][-1]
                    entries.append({"i": i + 1, "j": j, "k": k + 1, "coeffs": [float(x) for x in col[: nz + 1]]})
    return {
        "n_states": model.n_states,
        "k_max": model.k_max,
        "eps_max": model.eps_max,
        "label": model.label,
        "entries": entries,
    }


def eval_kernel(model: SemiMarkovModel, eps: float) -> np.ndarray:
    """Concrete kernel ``Q[i - 1, j, k - 1]`` at ``eps``."""
    if not (0.0 <= eps <= model.eps_max):
        raise ValueError(f"eps={eps} outside [0, {model.eps_max}]")
    if eps == 0.0:
        return np.array(model.kernel.coeffs[0])
    return model.kernel(eps)


def transition_probs(model: SemiMarkovModel, eps: float) -> np.ndarray:
    """Embedded-chain probabilities ``p_ij``, shape ``(N, N + 1)``."""
    return eval_kernel(model, eps).sum(axis=2)


def holding_distributions(model: SemiMarkovModel, eps: float) -> np.ndarray:
    """Conditional holding-time laws ``f_ij(k)``; 0/0 gives mass at ``k = 1``."""
    q = eval_kernel(model, eps)
    p = q.sum(axis=2, keepdims=True)
    f = np.zeros_like(q)
    pos = p[..., 0] > 0
    f[pos] = q[pos] / p[pos]
    f[~pos, 0] = 1.0
    return f


# ---------------------------------------------------------------------------
# conditions


def reachability(adjacency: np.ndarray) -> np.ndarray:
    """Paths of length >= 1 (boolean transitive closure, Warshall)."""
    r = np.array(adjacency, dtype=bool)
    n = r.shape[0]
    for m in range(n):
        r = r | (r[:, m : m + 1] & r[m : m + 1, :])
    return r


def validate_conditions(model: SemiMarkovModel, beta_max: float = 64.0) -> ConditionReport:
    """Check conditions A, B and C of the perturbation framework.

    A holds by construction (polynomials are continuous at zero).  B is decided
    on the exact zero pattern of the unperturbed embedded chain restricted to
    states ``1..N``.  C(a) is automatic for finite holding-time support; C(b)
    is probed by doubling ``beta`` from 1 to ``beta_max``.
    """
    from .hitting import NotFinite, solve_phi

    n = model.n_states
    q0 = model.kernel.coeffs[0]
    p0 = q0.sum(axis=2)
    f0 = holding_distributions(model, 0.0)

    witnesses: dict[str, Any] = {
        "A": {"p0": p0, "f0": f0},
    }
    reach = reachability(p0[:, 1:] > 0)
    b_holds = bool(reach.all())
    witnesses["B"] = {"reachable": reach}

    c_holds = False
    cw: dict[str, Any] = {"beta": None, "state": None, "phi": None}
    if b_holds:
        beta, last = 1.0, 0.0
        while beta <= beta_max and not c_holds:
            for i in range(1, n + 1):
                val = _probe_phi_above_one(model, i, last, beta, solve_phi, NotFinite)
                if val is not None:
                    c_holds = True
                    cw = {"beta": val[0], "state": i, "phi": val[1]}
                    break
            last, beta = beta, beta * 2
    witnesses["C"] = cw
    return ConditionReport(True, b_holds, c_holds, witnesses)


def _probe_phi_above_one(model, i, lo, hi, solve_phi, NotFinite):
    """Return ``(beta, phi_ii(beta))`` with ``phi in (1, inf)`` and ``beta <= hi``, or None."""

    def phi(beta):
        try:
            return solve_phi(model, 0.0, beta, i).phi[0, i - 1]
        except NotFinite:
            return None

    v = phi(hi)
    if v is not None:
        return (hi, v) if v > 1.0 else None
    # infinite at hi: phi blows up at the finiteness boundary, so a finite
    # value above one sits just below it
    a, b = lo, hi
    for _ in range(200):
        mid = 0.5 * (a + b)
        v = phi(mid)
        if v is None:
            b = mid
        elif v > 1.0:
            return mid, v
        else:
            a = mid
        if b - a < 1e-14:
            break
    return None
