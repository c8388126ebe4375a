"""Truncated power series in the perturbation parameter.

An :class:`EpsSeries` holds coefficients ``a[0..m]`` of a scalar-, vector- or
matrix-valued function of ``eps``::

    a(eps) = a[0] + a[1]*eps + ... + a[m]*eps**m + o(eps**m)

The ``order`` ``m`` is the highest power whose coefficient is known.  Higher
coefficients are unknown (not zero), so every binary operation returns a
series whose order is the smaller of the two operand orders.

:class:`EpsPoly` is the exact variant used for model inputs: a polynomial with
no remainder term.  It obeys the same arithmetic rules.
"""

from __future__ import annotations

from typing import Any

import numpy as np


class EpsSeries:
    """Truncated series with array-valued coefficients.

    Parameters
    ----------
    coeffs : array_like, shape (order + 1, *shape)
        ``coeffs[n]`` is the coefficient of ``eps**n``.
    order : int, optional
        Validity order.  Defaults to ``len(coeffs) - 1``.  If larger than the
        number of supplied coefficients the missing ones are zero-padded; if
        smaller, the coefficients are truncated.
    """

    __array_priority__ = 1000

    def __init__(self, coeffs: Any, order: int | None = None):
        c = np.array(coeffs, dtype=float)
        if c.ndim == 0:
            c = c.reshape(1)
        if c.shape[0] == 0:
            raise ValueError("series needs at least one coefficient")
        if order is None:
            order = c.shape[0] - 1
        if order < 0:
            raise ValueError(f"order must be >= 0, got {order}")
        if c.shape[0] < order + 1:
            pad = np.zeros((order + 1 - c.shape[0],) + c.shape[1:])
            c = np.concatenate([c, pad], axis=0)
        c = c[: order + 1]
        if not np.all(np.isfinite(c)):
            raise ValueError("series coefficients must be finite")
        c.setflags(write=False)
        self._coeffs = c

    # -- basic access -------------------------------------------------
    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def order(self) -> int:
        return self._coeffs.shape[0] - 1

    @property
    def shape(self) -> tuple[int, ...]:
        return self._coeffs.shape[1:]

    def __len__(self) -> int:
        return self._coeffs.shape[0]

    def __getitem__(self, idx) -> "EpsSeries":
        if not isinstance(idx, tuple):
            idx = (idx,)
        return type(self)(self._coeffs[(slice(None),) + idx])

    def __call__(self, eps: float) -> np.ndarray | float:
        """Evaluate the retained polynomial part at ``eps`` (Horner)."""
        out = np.zeros(self.shape)
        for c in self._coeffs[::-1]:
            out = out * eps + c
        return float(out) if out.ndim == 0 else out

    def truncate(self, order: int) -> "EpsSeries":
        if order > self.order:
            raise ValueError(f"cannot raise order {self.order} to {order}")
        return type(self)(self._coeffs[: order + 1])

    def with_order(self, order: int) -> "EpsSeries":
        """Zero-pad or truncate; for exact polynomials padding is legitimate."""
        return type(self)(self._coeffs, order=order)

    @classmethod
    def zeros(cls, order: int, shape: tuple[int, ...] = ()) -> "EpsSeries":
        return cls(np.zeros((order + 1,) + tuple(shape)))

    @classmethod
    def constant(cls, value: Any, order: int) -> "EpsSeries":
        v = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + v.shape)
        c[0] = v
        return cls(c)

    # -- arithmetic ---------------------------------------------------
    def _coerce(self, other: Any) -> "EpsSeries | None":
        if isinstance(other, EpsSeries):
            return other
        return None

    def __add__(self, other: Any) -> "EpsSeries":
        o = self._coerce(other)
        if o is None:
            c = np.array(self._coeffs)
            c[0] = c[0] + np.asarray(other, dtype=float)
            return EpsSeries(c)
        m = min(self.order, o.order)
        return EpsSeries(self._coeffs[: m + 1] + o._coeffs[: m + 1])

    __radd__ = __add__

    def __neg__(self) -> "EpsSeries":
        return EpsSeries(-self._coeffs)

    def __sub__(self, other: Any) -> "EpsSeries":
        return self + (-other)

    def __rsub__(self, other: Any) -> "EpsSeries":
        return (-self) + other

    def __mul__(self, other: Any) -> "EpsSeries":
        o = self._coerce(other)
        if o is None:
            return EpsSeries(self._coeffs * np.asarray(other, dtype=float))
        return _cauchy(self, o, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "EpsSeries":
        if isinstance(other, EpsSeries):
            raise TypeError("division by a series is not supported")
        return EpsSeries(self._coeffs / np.asarray(other, dtype=float))

    def __matmul__(self, other: Any) -> "EpsSeries":
        o = self._coerce(other)
        if o is None:
            return EpsSeries(np.stack([c @ np.asarray(other) for c in self._coeffs]))
        return _cauchy(self, o, np.matmul)

    def __rmatmul__(self, other: Any) -> "EpsSeries":
        a = np.asarray(other, dtype=float)
        return EpsSeries(np.stack([a @ c for c in self._coeffs]))

    def allclose(self, other: "EpsSeries", atol: float = 1e-12, rtol: float = 0.0) -> bool:
        if self.order != other.order or self.shape != other.shape:
            return False
        return bool(np.allclose(self._coeffs, other._coeffs, atol=atol, rtol=rtol))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(order={self.order}, shape={self.shape})"


class EpsPoly(EpsSeries):
    """Exact polynomial in ``eps`` (a model input, no remainder)."""

    def __init__(self, coeffs: Any, order: int | None = None):
        super().__init__(coeffs, order)

    @property
    def degree(self) -> int:
        nz = np.nonzero(np.any(self.coeffs.reshape(len(self), -1) != 0, axis=1))[0]
        return int(nz[-1]) if len(nz) else 0


def _cauchy(a: EpsSeries, b: EpsSeries, op) -> EpsSeries:
    m = min(a.order, b.order)
    ac, bc = a.coeffs, b.coeffs
    first = op(ac[0], bc[0])
    out = np.zeros((m + 1,) + np.shape(first))
    for n in range(m + 1):
        acc = np.zeros(np.shape(first))
        for q in range(n + 1):
            acc = acc + op(ac[q], bc[n - q])
        out[n] = acc
    return EpsSeries(out)
