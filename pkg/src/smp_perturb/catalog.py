"""Reference models with closed-form answers, and a seeded random-model generator."""

from __future__ import annotations

import numpy as np

from .model import SemiMarkovModel, make_model, reachability


def m1(eps_max: float = 0.4) -> SemiMarkovModel:
    """One state, unit holding time: stay w.p. ``0.5 - eps``, exit w.p. ``0.5 + eps``."""
    return make_model(1, 1, {(1, 1, 1): [0.5, -1.0], (1, 0, 1): [0.5, 1.0]}, eps_max, "M1")


def m2(eps_max: float = 0.5) -> SemiMarkovModel:
    """Two states, unit holding times: ``1 -> 2`` surely, ``2 -> 1`` w.p. ``1 - eps``, ``2 -> 0`` w.p. ``eps``."""
    return make_model(2, 1, {(1, 2, 1): [1.0], (2, 1, 1): [1.0, -1.0], (2, 0, 1): [0.0, 1.0]}, eps_max, "M2")


def m1_broken(eps_max: float = 0.4) -> dict:
    """M1 with the exit probability frozen at 0.5 (row sum ``1 - eps``), as a raw document."""
    return {
        "n_states": 1,
        "k_max": 1,
        "eps_max": eps_max,
        "label": "M1-broken",
        "entries": [{"i": 1, "j": 1, "k": 1, "coeffs": [0.5, -1.0]}, {"i": 1, "j": 0, "k": 1, "coeffs": [0.5]}],
    }


def two_step_holding(eps_max: float = 0.5) -> SemiMarkovModel:
    """One state, no exit: holding time 1 w.p. ``1 - eps``, 2 w.p. ``eps`` (``E kappa = 1 + eps``)."""
    return make_model(1, 2, {(1, 1, 1): [1.0, -1.0], (1, 1, 2): [0.0, 1.0]}, eps_max, "two-step")


def cycle3(eps_max: float = 0.5) -> SemiMarkovModel:
    """States 2 and 3 swap forever; state 1 feeds the cycle.  Used for divergence checks."""
    return make_model(3, 1, {(1, 2, 1): [1.0], (2, 3, 1): [1.0], (3, 2, 1): [1.0]}, eps_max, "cycle3")


def disconnected(eps_max: float = 0.5) -> SemiMarkovModel:
    """Two states that never reach each other."""
    return make_model(2, 1, {(1, 1, 1): [0.5], (1, 0, 1): [0.5], (2, 2, 1): [0.5], (2, 0, 1): [0.5]}, eps_max, "disconnected")


def random_model(
    rng: np.random.Generator,
    n_states: int | None = None,
    k_max: int | None = None,
    eps_max: float = 0.1,
    density: float = 0.6,
    degree: int = 1,
    max_tries: int = 1000,
) -> SemiMarkovModel:
    """Random model for which conditions A-C hold.

    Each row spreads a normalized gamma(1) draw over a random subset of the
    ``(j, k)`` cells.  The eps-terms are zero-sum over the same cells and sized
    so that every entry stays within half of its base value on
    ``[0, eps_max]``; the support (and hence condition B) does not change with
    eps.  Draws failing condition B are resampled.
    """
    for _ in range(max_tries):
        N = int(n_states or rng.integers(2, 5))
        K = int(k_max or rng.integers(1, 6))
        coeffs = np.zeros((degree + 1, N, N + 1, K))
        for i in range(N):
            mask = rng.random((N + 1, K)) < density
            if not mask.any():
                mask[rng.integers(N + 1), rng.integers(K)] = True
            base = np.where(mask, rng.gamma(1.0, size=mask.shape), 0.0)
            base /= base.sum()
            coeffs[0, i] = base
            idx = np.nonzero(mask)
            if len(idx[0]) < 2:
                continue
            b = base[idx]
            share = 0.5 / degree
            for d in range(1, degree + 1):
                v = rng.normal(size=len(b))
                v -= v.mean()
                peak = np.max(np.abs(v) / b)
                if peak == 0:
                    continue
                v *= share / (peak * eps_max**d)
                v -= v.mean()
                coeffs[d, i][idx] = v
        p0 = coeffs[0].sum(axis=2)
        if not reachability(p0[:, 1:] > 0).all():
            continue
        entries = {}
        for i in range(N):
            for j in range(N + 1):
                for k in range(K):
                    col = coeffs[:, i, j, k]
                    if np.any(col != 0):
                        entries[(i + 1, j, k + 1)] = col
        return make_model(N, K, entries, eps_max, "random")
    raise RuntimeError("could not draw a model satisfying condition B")


def random_models(seed: int, count: int, **kwargs) -> list[SemiMarkovModel]:
    rng = np.random.default_rng(seed)
    return [random_model(rng, **kwargs) for _ in range(count)]
