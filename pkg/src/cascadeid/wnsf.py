"""Weighted null-space fitting, steps 2 and 3, for a single module and for
the two-input cascade network.

Step 2 maps the non-parametric FIR estimate to structured module parameters
through a linear relation ``g = Q(g) theta``. Step 3 re-solves the same
relation by weighted least squares, the weighting being the inverse
covariance ``(T P T^T)^-1`` of the linearized residual, and iterates with the
weighting rebuilt from each new estimate.

Two equivalent linearizations of the (2,1) network entry are supported: the
``WNSF1`` variant ties it to module 1 (input-side), the ``WNSF3`` variant to
module 3 (output-side).
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.signal

from . import pem
from .errors import (
    ConditioningError,
    DimensionError,
    ExcitationError,
    IdentifiabilityError,
    InstabilityError,
    ParameterError,
)
from .fir import (
    FirCovariance,
    _estimate_from_normal,
    _rcond_spd,
    _regressor_normal,
    _slice_regressor_normal,
)
from .lti import OrderSpec, filt, is_stable as lti_is_stable, toeplitz_lower
from .netsim import DataRecord, ThetaVector

__all__ = [
    "EstimateReport",
    "OrderDiagnostics",
    "Variant",
    "WnsfConfig",
    "build_q_cascade",
    "build_q_siso",
    "build_t_cascade",
    "residual_covariance",
    "step2_ls",
    "step3_wls",
    "wnsf_identify",
    "wnsf_siso",
]


class Variant(enum.Enum):
    """Choice of linearizing replacement for the (2,1) network entry."""

    WNSF1 = "wnsf1"
    WNSF3 = "wnsf3"


@dataclass(frozen=True)
class WnsfConfig:
    n_grid: tuple[int, ...] = (20, 30, 40)
    max_iter: int = 1000
    tol: float = 1e-6
    variant: Variant = Variant.WNSF1

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if not self.n_grid:
            raise ParameterError("n_grid must be nonempty")
        if self.max_iter < 1:
            raise ParameterError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ParameterError("tol must be positive")


@dataclass(frozen=True)
class OrderDiagnostics:
    """Outcome of the WNSF iteration at one FIR order."""

    n: int
    iterations: int
    cost: float
    stable: bool


@dataclass(frozen=True)
class EstimateReport:
    theta: ThetaVector
    chosen_n: int
    per_order: tuple[OrderDiagnostics, ...]
    converged: bool
    wall_time_s: float
    variant: Variant | None = None


def build_q_siso(g: np.ndarray, orders: OrderSpec) -> np.ndarray:
    """Regressor with ``g = Q(g) theta`` for one module: denominator columns
    carry down-shifted copies of g, numerator columns a delayed identity."""
    g = np.asarray(g, dtype=float).ravel()
    n = len(g)
    if n < orders.n_params:
        raise DimensionError(
            f"FIR order n={n} is below the parameter count {orders.n_params}"
        )
    return np.hstack(
        [
            -toeplitz_lower(g, n, orders.n_f, shift=1),
            toeplitz_lower([1.0], n, orders.n_b, shift=orders.n_k),
        ]
    )


def _theta_col_slices(orders) -> list[slice]:
    out, pos = [], 0
    for o in orders:
        out.append(slice(pos, pos + o.n_params))
        pos += o.n_params
    return out


def build_q_cascade(
    g_hat: np.ndarray, orders, variant: Variant = Variant.WNSF1
) -> np.ndarray:
    """Stacked regressor for the cascade, 4n rows by d columns.

    Row blocks are the linear equations satisfied by (g11, g12, g21, g22);
    the (2,1) equation couples to module 1 under WNSF1 and to module 3 under
    WNSF3.
    """
    g_hat = np.asarray(g_hat, dtype=float).ravel()
    if len(g_hat) % 4:
        raise DimensionError("stacked FIR vector length must be a multiple of 4")
    n = len(g_hat) // 4
    g11, g12, g21, g22 = (g_hat[k * n : (k + 1) * n] for k in range(4))
    o1, o2, o3 = orders
    cols = _theta_col_slices(orders)
    d = sum(o.n_params for o in orders)
    q = np.zeros((4 * n, d))

    def block(g_den, g_num, o: OrderSpec) -> np.ndarray:
        return np.hstack(
            [
                -toeplitz_lower(g_den, n, o.n_f, shift=1),
                toeplitz_lower(g_num, n, o.n_b, shift=o.n_k),
            ]
        )

    q[0:n, cols[0]] = block(g11, g12, o1)
    q[n : 2 * n, cols[1]] = build_q_siso(g12, o2)
    if variant is Variant.WNSF1:
        q[2 * n : 3 * n, cols[0]] = block(g21, g22, o1)
    else:
        q[2 * n : 3 * n, cols[2]] = block(g21, g11, o3)
    q[3 * n : 4 * n, cols[2]] = block(g22, g12, o3)
    return q


def _add_toeplitz_block(t, i0, j0, coeffs, shift, n, sign):
    """Write a lower-triangular Toeplitz block (column = coeffs delayed by
    shift) into t at block offset (i0, j0) by filling its subdiagonals."""
    for k, c in enumerate(coeffs):
        d = shift + k
        if d >= n:
            break
        np.fill_diagonal(t[i0 + d : i0 + n, j0 : j0 + n - d], sign * c)


def build_t_cascade(
    theta: ThetaVector, n: int, variant: Variant = Variant.WNSF1
) -> np.ndarray:
    """Jacobian of the stacked residual ``g - Q(g) theta`` with respect to g.

    Every block is a lower-triangular Toeplitz convolution matrix: diagonal
    blocks carry the monic denominators (unit diagonal, so det T = 1),
    off-diagonal blocks the delayed numerators.
    """
    if len(theta.orders) != 3:
        raise DimensionError("cascade T requires a three-module parameter vector")
    t = np.zeros((4 * n, 4 * n))
    f = [np.concatenate([[1.0], theta.f(j)]) for j in range(3)]
    b = [theta.b(j) for j in range(3)]
    nk = [o.n_k for o in theta.orders]

    _add_toeplitz_block(t, 0, 0, f[0], 0, n, 1.0)
    _add_toeplitz_block(t, 0, n, b[0], nk[0], n, -1.0)
    _add_toeplitz_block(t, n, n, f[1], 0, n, 1.0)
    if variant is Variant.WNSF1:
        _add_toeplitz_block(t, 2 * n, 2 * n, f[0], 0, n, 1.0)
        _add_toeplitz_block(t, 2 * n, 3 * n, b[0], nk[0], n, -1.0)
    else:
        _add_toeplitz_block(t, 2 * n, 0, b[2], nk[2], n, -1.0)
        _add_toeplitz_block(t, 2 * n, 2 * n, f[2], 0, n, 1.0)
    _add_toeplitz_block(t, 3 * n, n, b[2], nk[2], n, -1.0)
    _add_toeplitz_block(t, 3 * n, 3 * n, f[2], 0, n, 1.0)
    return t


def _lstsq_full_rank(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Least squares via column-pivoted QR, rejecting rank deficiency."""
    q_, r_, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
    d = a.shape[1]
    diag = np.abs(np.diag(r_))
    cutoff = max(a.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > cutoff))
    if rank < d:
        deficient = sorted(int(c) for c in piv[rank:])
        raise IdentifiabilityError(
            f"regressor is rank deficient (rank {rank} of {d}); "
            f"columns {deficient} are not identifiable"
        )
    z = q_.T @ b
    x_piv = scipy.linalg.solve_triangular(r_, z[:d])
    x = np.empty(d)
    x[piv] = x_piv
    return x


def step2_ls(q: np.ndarray, g_hat: np.ndarray, orders) -> ThetaVector:
    """Unweighted least-squares fit of ``g_hat = Q theta``."""
    values = _lstsq_full_rank(np.asarray(q, dtype=float), np.asarray(g_hat, float))
    orders = (orders,) if isinstance(orders, OrderSpec) else tuple(orders)
    return ThetaVector(values=values, orders=orders)


def _residual_variances(data: DataRecord, theta: ThetaVector) -> np.ndarray:
    """Per-output residual variances of the noise-free cascade response."""
    f = []
    for j in range(3):
        a = np.concatenate([[1.0], theta.f(j)])
        if not lti_is_stable(a):
            raise InstabilityError(f"module {j + 1} denominator is unstable")
        f.append(a)
    b = [
        np.concatenate([np.zeros(theta.orders[j].n_k), theta.b(j)])
        for j in range(3)
    ]
    s = scipy.signal.lfilter(b[1], f[1], scipy.signal.lfilter(b[0], f[0], data.u1) + data.u2)
    e1 = data.y1 - s
    e2 = data.y2 - scipy.signal.lfilter(b[2], f[2], s)
    n = data.n_samples
    return np.array([e1 @ e1 / n, e2 @ e2 / n])


def residual_covariance(data: DataRecord, theta: ThetaVector) -> np.ndarray:
    """Diagonal 2x2 sample covariance of the output residuals at ``theta``.

    Off-diagonals are zeroed: the sensor noises are modeled as independent.
    Raises InstabilityError when ``theta`` has an unstable denominator.
    """
    return np.diag(_residual_variances(data, theta))


def _cascade_block_perm(n: int) -> np.ndarray:
    """Block order under which the cascade T is strictly lower triangular:
    the g12 equations first (they close on themselves), then g11, then g22,
    then g21 (true for both linearization variants)."""
    blocks = (1, 0, 3, 2)
    return np.concatenate([np.arange(k * n, (k + 1) * n) for k in blocks])


def _weighted_solve(q, g_hat, t, apply_inverse, orders, perm=None) -> ThetaVector:
    """Solve the weighted least-squares step with W^-1 = T P T^T, without
    forming W: each weighted column is obtained by a T-solve, a P^-1 apply,
    and a T^T-solve. ``perm`` is a symmetric row/column permutation under
    which T is unit lower triangular (None when it already is)."""
    d = q.shape[1]
    rhs = np.column_stack([q, g_hat])
    if perm is not None:
        t = t[np.ix_(perm, perm)]
        rhs_p = rhs[perm]
    else:
        rhs_p = rhs
    y = scipy.linalg.solve_triangular(t, rhs_p, lower=True, unit_diagonal=True)
    if perm is not None:
        y_full = np.empty_like(y)
        y_full[perm] = y
        y = apply_inverse(y_full)[perm]
    else:
        y = apply_inverse(y)
    z = scipy.linalg.solve_triangular(
        t, y, trans="T", lower=True, unit_diagonal=True
    )
    if perm is not None:
        z_full = np.empty_like(z)
        z_full[perm] = z
        z = z_full
    h = q.T @ z[:, :d]
    h = 0.5 * (h + h.T)
    rcond = _rcond_spd(h)
    if rcond < 1e-12:
        raise ConditioningError(
            f"weighted normal equations are numerically singular (rcond={rcond:.2e})"
        )
    values = scipy.linalg.cho_solve(
        scipy.linalg.cho_factor(h, lower=True), q.T @ z[:, d]
    )
    orders = (orders,) if isinstance(orders, OrderSpec) else tuple(orders)
    return ThetaVector(values=values, orders=orders)


def step3_wls(
    q: np.ndarray, g_hat: np.ndarray, t: np.ndarray, p: FirCovariance, orders
) -> ThetaVector:
    """Weighted re-estimation of theta using the step-1 covariance handle."""
    return _weighted_solve(
        q, g_hat, t, p.apply_inverse, orders, perm=_cascade_block_perm(t.shape[0] // 4)
    )


def _lambda_floor(data: DataRecord) -> float:
    out_power = 0.5 * (np.mean(data.y1**2) + np.mean(data.y2**2))
    return max(1e-12 * out_power, 1e-30)


def _iterate_weighted(g_hat, q, theta0, config, build_t, make_weight_inverse, perm=None):
    """Shared step-3 iteration: rebuild the weighting from each iterate until
    the relative parameter change drops below tol or max_iter is reached."""
    theta = theta0
    iterations = 0
    for _ in range(config.max_iter):
        t = build_t(theta)
        theta_new = _weighted_solve(
            q, g_hat, t, make_weight_inverse(theta), theta.orders, perm=perm
        )
        iterations += 1
        denom = np.linalg.norm(theta.values)
        change = np.linalg.norm(theta_new.values - theta.values) / max(
            denom, np.finfo(float).tiny
        )
        theta = theta_new
        if change < config.tol:
            break
    return theta, iterations


def _validate_grid(orders, config: WnsfConfig):
    needed = max(o.n_f + o.n_b + o.n_k for o in orders)
    for n in config.n_grid:
        if n < needed:
            raise ParameterError(
                f"FIR order n={n} is too small for the module orders (need >= {needed})"
            )


def wnsf_identify(
    data: DataRecord, orders, config: WnsfConfig | None = None
) -> EstimateReport:
    """Full cascade WNSF: FIR estimation, linear fit, and iterated weighted
    re-estimation for every order in the grid; the estimate minimizing the
    prediction-error determinant criterion is returned.

    If an iterate is unstable, the residual covariance from the last stable
    iterate (or a unit covariance before any exists) keeps the weighting
    usable and the iteration continues.
    """
    config = config or WnsfConfig()
    orders = tuple(orders)
    if len(orders) != 3:
        raise DimensionError("cascade identification requires three order specs")
    _validate_grid(orders, config)

    start = time.perf_counter()
    n_max = max(config.n_grid)
    r_full, c1_full, c2_full = _regressor_normal(data, n_max)
    floor = _lambda_floor(data)

    diagnostics: list[OrderDiagnostics] = []
    candidates: list[ThetaVector] = []
    for n in config.n_grid:
        r, c1, c2 = _slice_regressor_normal(r_full, c1_full, c2_full, n_max, n)
        est = _estimate_from_normal(r, c1, c2, n)
        q = build_q_cascade(est.g_hat, orders, config.variant)
        theta = step2_ls(q, est.g_hat, orders)

        last_lambda = None

        def weight_inverse(th, _r=r, _n=n):
            # apply the Lambda-scaled information matrix; R is fixed per
            # order and already validated positive definite, only the
            # residual variances change between iterations
            nonlocal last_lambda
            try:
                lam = np.maximum(_residual_variances(data, th), floor)
                last_lambda = lam
            except InstabilityError:
                lam = last_lambda if last_lambda is not None else np.ones(2)

            def apply_inverse(x, _lam=lam):
                return np.concatenate(
                    [
                        (_r @ x[: 2 * _n]) / _lam[0],
                        (_r @ x[2 * _n :]) / _lam[1],
                    ]
                )

            return apply_inverse

        theta, iterations = _iterate_weighted(
            est.g_hat,
            q,
            theta,
            config,
            build_t=lambda th, _n=n: build_t_cascade(th, _n, config.variant),
            make_weight_inverse=weight_inverse,
            perm=_cascade_block_perm(n),
        )

        stable = theta.is_stable()
        cost = pem.pem_cost(theta, data) if stable else np.inf
        diagnostics.append(
            OrderDiagnostics(n=n, iterations=iterations, cost=cost, stable=stable)
        )
        candidates.append(theta)

    costs = np.array([diag.cost for diag in diagnostics])
    best = int(np.argmin(costs))
    return EstimateReport(
        theta=candidates[best],
        chosen_n=diagnostics[best].n,
        per_order=tuple(diagnostics),
        converged=bool(np.isfinite(costs[best])),
        wall_time_s=time.perf_counter() - start,
        variant=config.variant,
    )


class _ScalarInfo:
    """Unit-noise information handle for the single-module case, where the
    scalar noise variance cancels out of the weighting."""

    def __init__(self, r: np.ndarray):
        self._r = r

    def apply_inverse(self, x):
        return self._r @ x


def wnsf_siso(u, y, orders: OrderSpec, config: WnsfConfig | None = None) -> EstimateReport:
    """Single-module WNSF on scalar input/output data."""
    config = config or WnsfConfig()
    _validate_grid((orders,), config)
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(u) != len(y):
        raise DimensionError("u and y must share the same length")
    n_max = max(config.n_grid)
    if len(u) <= 2 * n_max:
        raise ParameterError(f"need more than {2 * n_max} samples for n={n_max}")

    start = time.perf_counter()
    phi_full = toeplitz_lower(u, len(u), n_max)
    r_full = phi_full.T @ phi_full
    c_full = phi_full.T @ y

    diagnostics: list[OrderDiagnostics] = []
    candidates: list[ThetaVector] = []
    for n in config.n_grid:
        r = r_full[:n, :n]
        rcond = _rcond_spd(r)
        if rcond < 1e-12:
            raise ExcitationError(
                f"input is not persistently exciting at order n={n} (rcond={rcond:.2e})"
            )
        cho = scipy.linalg.cho_factor(r, lower=True)
        g_hat = scipy.linalg.cho_solve(cho, c_full[:n])

        q = build_q_siso(g_hat, orders)
        theta = step2_ls(q, g_hat, orders)
        handle = _ScalarInfo(r)
        theta, iterations = _iterate_weighted(
            g_hat,
            q,
            theta,
            config,
            build_t=lambda th, _n=n: toeplitz_lower(
                np.concatenate([[1.0], th.f(0)]), _n, _n
            ),
            make_weight_inverse=lambda th: handle.apply_inverse,
        )

        tf = theta.transfer_functions()[0]
        stable = tf.is_stable()
        if stable:
            eps = y - filt(tf, u)
            cost = float(np.mean(eps * eps))
        else:
            cost = np.inf
        diagnostics.append(
            OrderDiagnostics(n=n, iterations=iterations, cost=cost, stable=stable)
        )
        candidates.append(theta)

    costs = np.array([diag.cost for diag in diagnostics])
    best = int(np.argmin(costs))
    return EstimateReport(
        theta=candidates[best],
        chosen_n=diagnostics[best].n,
        per_order=tuple(diagnostics),
        converged=bool(np.isfinite(costs[best])),
        wall_time_s=time.perf_counter() - start,
        variant=None,
    )
