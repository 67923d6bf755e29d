"""Discrete-time LTI primitives: polynomials in the backward shift, rational
transfer functions, filtering, and lower-triangular Toeplitz constructors.

Polynomials are plain 1-D float arrays in ascending powers of q^-1, i.e.
``coeffs[k]`` multiplies ``q^-k``. Denominators are monic (leading 1 stored).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.signal

from .errors import DimensionError, ParameterError

__all__ = [
    "OrderSpec",
    "TransferFunction",
    "as_poly",
    "filt",
    "impulse_response",
    "is_stable",
    "poly_mul",
    "toeplitz_lower",
]


def as_poly(coeffs) -> np.ndarray:
    """Validate and convert a coefficient sequence to a 1-D float array."""
    arr = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionError("polynomial must be a nonempty 1-D coefficient sequence")
    return arr


@dataclass(frozen=True)
class OrderSpec:
    """Structure of one rational module: ``n_b`` numerator coefficients,
    ``n_f`` denominator coefficients past the leading 1, ``n_k`` input delay.
    """

    n_b: int
    n_f: int
    n_k: int = 0

    def __post_init__(self):
        if self.n_b < 1:
            raise ParameterError(f"n_b must be >= 1, got {self.n_b}")
        if self.n_f < 0 or self.n_k < 0:
            raise ParameterError("n_f and n_k must be nonnegative")

    @property
    def n_params(self) -> int:
        return self.n_f + self.n_b


@dataclass(frozen=True)
class TransferFunction:
    """Rational module ``num(q)/den(q) * q^-n_k`` with monic denominator.

    ``num[0]`` is the coefficient at lag ``n_k``; ``den`` stores the full
    monic polynomial including the leading 1.
    """

    num: np.ndarray
    den: np.ndarray = field(default_factory=lambda: np.ones(1))
    n_k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "num", as_poly(self.num))
        object.__setattr__(self, "den", as_poly(self.den))
        if self.den[0] != 1.0:
            raise ParameterError("denominator must be monic (first coefficient 1)")
        if self.n_k < 0:
            raise ParameterError("n_k must be nonnegative")

    @property
    def orders(self) -> OrderSpec:
        return OrderSpec(n_b=len(self.num), n_f=len(self.den) - 1, n_k=self.n_k)

    def is_stable(self) -> bool:
        return is_stable(self.den)


def poly_mul(a, b) -> np.ndarray:
    """Product of two q^-1 polynomials (discrete convolution of coefficients)."""
    return np.convolve(as_poly(a), as_poly(b))


def is_stable(den) -> bool:
    """True iff all roots of the monic polynomial lie strictly inside the
    unit circle, decided by the Schur-Cohn recursion (no eigensolver).

    A reflection coefficient of magnitude exactly 1 marks a marginal
    polynomial and is reported as unstable.
    """
    a = as_poly(den)
    if a[0] != 1.0:
        raise ParameterError("stability test expects a monic polynomial")
    a = a.copy()
    while len(a) > 1:
        rc = a[-1]
        if abs(rc) >= 1.0 or not np.isfinite(rc):
            return False
        # one step of the reverse Levinson / Schur-Cohn recursion; keeps a monic
        a = (a[:-1] - rc * a[:0:-1]) / (1.0 - rc * rc)
    return True


def filt(tf: TransferFunction, x) -> np.ndarray:
    """Apply ``tf`` to a signal with zero initial conditions.

    Implements the difference equation
    ``y(t) = sum_i num[i] x(t - n_k - i) - sum_k den[k] y(t - k)``,
    treating samples before t=0 as zero. Output length equals input length.
    """
    x = np.asarray(x, dtype=float)
    b = np.concatenate([np.zeros(tf.n_k), tf.num])
    return scipy.signal.lfilter(b, tf.den, x)


def impulse_response(tf: TransferFunction, n: int) -> np.ndarray:
    """First ``n`` impulse-response coefficients of ``tf`` (long division)."""
    if n < 1:
        raise ParameterError(f"impulse response length must be >= 1, got {n}")
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return filt(tf, impulse)


def toeplitz_lower(x, n: int, m: int, shift: int = 0) -> np.ndarray:
    """n-by-m lower-triangular Toeplitz matrix whose column j holds ``x``
    delayed by ``shift + j`` rows, zero elsewhere (rows beyond n truncate).

    ``shift=0`` gives the plain banded convolution matrix; ``shift=1``
    realizes multiplication by the down-shift of ``x``.
    """
    x = as_poly(x)
    if n < m:
        raise DimensionError(f"need n >= m, got n={n}, m={m}")
    if shift < 0:
        raise ParameterError("shift must be nonnegative")
    col = np.zeros(n)
    if shift < n:
        k = min(len(x), n - shift)
        col[shift : shift + k] = x[:k]
    return scipy.linalg.toeplitz(col, np.zeros(m))
