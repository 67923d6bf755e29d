"""Non-parametric MIMO FIR estimation by least squares (WNSF step 1).

Each output is regressed on the first ``n`` lags of both inputs. The two
outputs share the same regressors and decouple because the noise covariance
is diagonal, so the stacked information matrix is block diagonal with two
identical 2n-by-2n blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ExcitationError, InsufficientDataError, ParameterError
from .lti import toeplitz_lower
from .netsim import DataRecord

__all__ = [
    "FirCovariance",
    "FirEstimate",
    "build_normal_equations",
    "estimate_fir",
    "fir_covariance",
]

# reciprocal-condition floor below which the regressor block is rejected
RCOND_FLOOR = 1e-12


@dataclass(frozen=True)
class FirEstimate:
    """Stacked FIR estimate: blocks (g11, g12, g21, g22) of length ``n`` each,
    plus the unit-noise information matrix ``sum_t phi(t) phi(t)^T``.
    """

    g_hat: np.ndarray
    info: np.ndarray
    n: int

    def block(self, i: int, j: int) -> np.ndarray:
        """FIR coefficients from input j to output i (1-based indices)."""
        k = 2 * (i - 1) + (j - 1)
        return self.g_hat[k * self.n : (k + 1) * self.n]


def _regressor_normal(
    data: DataRecord, n: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shared per-output normal equations: R = Phi^T Phi and Phi^T y_i."""
    if data.n_samples <= 2 * n:
        raise InsufficientDataError(
            f"need N > 2n for FIR order n={n}, got N={data.n_samples}"
        )
    phi1 = toeplitz_lower(data.u1, data.n_samples, n)
    phi2 = toeplitz_lower(data.u2, data.n_samples, n)
    r12 = phi1.T @ phi2
    r = np.block([[phi1.T @ phi1, r12], [r12.T, phi2.T @ phi2]])
    ys = np.column_stack([data.y1, data.y2])
    c1, c2 = np.vstack([phi1.T @ ys, phi2.T @ ys]).T
    return r, c1, c2


def build_normal_equations(
    data: DataRecord, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Information matrix (4n x 4n, unit noise weighting) and cross vector."""
    r, c1, c2 = _regressor_normal(data, n)
    info = scipy.linalg.block_diag(r, r)
    return info, np.concatenate([c1, c2])


def _rcond_spd(r: np.ndarray) -> float:
    eigs = scipy.linalg.eigvalsh(r)
    top = eigs[-1]
    if top <= 0:
        return 0.0
    return max(eigs[0], 0.0) / top


def _solve_fir_blocks(r, c1, c2, n) -> np.ndarray:
    rcond = _rcond_spd(r)
    if rcond < RCOND_FLOOR:
        raise ExcitationError(
            "FIR regressor block (shared by outputs 1 and 2) is singular or "
            f"ill-conditioned at order n={n} (rcond={rcond:.2e}); "
            "inputs are not persistently exciting"
        )
    cho = scipy.linalg.cho_factor(r, lower=True)
    g1 = scipy.linalg.cho_solve(cho, c1)
    g2 = scipy.linalg.cho_solve(cho, c2)
    return np.concatenate([g1, g2])


def _estimate_from_normal(r, c1, c2, n) -> FirEstimate:
    g = _solve_fir_blocks(r, c1, c2, n)
    return FirEstimate(g_hat=g, info=scipy.linalg.block_diag(r, r), n=n)


def estimate_fir(data: DataRecord, n: int) -> FirEstimate:
    """Least-squares FIR estimate of all four input/output channels."""
    r, c1, c2 = _regressor_normal(data, n)
    return _estimate_from_normal(r, c1, c2, n)


def _slice_regressor_normal(r, c1, c2, n_full: int, n: int):
    """Restrict max-order normal equations to the first ``n`` lags per input.

    Valid because each entry is a fixed sum over the data, independent of
    the order the matrix was built for.
    """
    idx = np.concatenate([np.arange(n), n_full + np.arange(n)])
    return r[np.ix_(idx, idx)], c1[idx], c2[idx]


class FirCovariance:
    """Factorization handle for the FIR estimate covariance
    ``P = [sum_t phi(t) Lambda^-1 phi(t)^T]^-1``.

    Supports applying both P and its inverse without materializing P;
    ``dense()`` builds it explicitly when needed.
    """

    def __init__(self, est: FirEstimate, lambdas):
        lam1, lam2 = float(lambdas[0]), float(lambdas[1])
        if lam1 <= 0 or lam2 <= 0:
            raise ParameterError(f"noise variances must be positive, got {lambdas}")
        self.n = est.n
        self.lambdas = (lam1, lam2)
        self._r = est.info[: 2 * est.n, : 2 * est.n]
        rcond = _rcond_spd(self._r)
        if rcond < RCOND_FLOOR:
            raise ExcitationError(
                f"information matrix is not positive definite (rcond={rcond:.2e})"
            )
        self._cho = scipy.linalg.cho_factor(self._r, lower=True)

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        return x[: 2 * self.n], x[2 * self.n :]

    def apply(self, x) -> np.ndarray:
        """P @ x for a vector or matrix with 4n rows."""
        top, bot = self._split(x)
        return np.concatenate(
            [
                self.lambdas[0] * scipy.linalg.cho_solve(self._cho, top),
                self.lambdas[1] * scipy.linalg.cho_solve(self._cho, bot),
            ]
        )

    def apply_inverse(self, x) -> np.ndarray:
        """P^-1 @ x, i.e. the Lambda-scaled information matrix times x."""
        top, bot = self._split(x)
        return np.concatenate(
            [(self._r @ top) / self.lambdas[0], (self._r @ bot) / self.lambdas[1]]
        )

    def dense(self) -> np.ndarray:
        """Materialized covariance matrix (symmetrized)."""
        rinv = scipy.linalg.cho_solve(self._cho, np.eye(2 * self.n))
        rinv = 0.5 * (rinv + rinv.T)
        return scipy.linalg.block_diag(
            self.lambdas[0] * rinv, self.lambdas[1] * rinv
        )


def fir_covariance(est: FirEstimate, lambdas) -> FirCovariance:
    """Covariance handle of the FIR estimate for noise variances ``lambdas``."""
    return FirCovariance(est, lambdas)
