"""Synthetic data generation for the two-input / two-output serial cascade.

The network has three stable rational modules in series: the first input
drives module 1, the second input is added between modules 1 and 2, the
output of module 2 is measured (plus white sensor noise) and also feeds
module 3, whose output is the second noisy measurement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InstabilityError, ParameterError
from .lti import OrderSpec, TransferFunction, filt

__all__ = [
    "CascadeModel",
    "DataRecord",
    "InputSpec",
    "ThetaVector",
    "gen_inputs",
    "generate_dataset",
    "load_record_csv",
    "save_record_csv",
    "simulate_network",
    "white_noise",
]

# fixed sub-stream offsets so every noise source is independently replayable
STREAM_E1 = 0
STREAM_E2 = 1
STREAM_E1U = 2
STREAM_E2U = 3


@dataclass(frozen=True)
class ThetaVector:
    """Stacked module parameters: per module ``[f_1..f_nf, b_0..b_{nb-1}]``,
    concatenated in module order. The leading 1 of each denominator is
    implied, not stored.
    """

    values: np.ndarray
    orders: tuple[OrderSpec, ...]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "orders", tuple(self.orders))
        d = sum(o.n_params for o in self.orders)
        if len(vals) != d:
            raise DimensionError(
                f"theta has {len(vals)} entries but orders imply {d}"
            )

    @property
    def size(self) -> int:
        return len(self.values)

    def offsets(self) -> list[int]:
        """Start index of each module's parameter block."""
        out, pos = [], 0
        for o in self.orders:
            out.append(pos)
            pos += o.n_params
        return out

    def f(self, j: int) -> np.ndarray:
        """Denominator coefficients of module j (0-based), without the leading 1."""
        start = self.offsets()[j]
        return self.values[start : start + self.orders[j].n_f]

    def b(self, j: int) -> np.ndarray:
        """Numerator coefficients of module j (0-based)."""
        o = self.orders[j]
        start = self.offsets()[j] + o.n_f
        return self.values[start : start + o.n_b]

    def transfer_functions(self) -> tuple[TransferFunction, ...]:
        return tuple(
            TransferFunction(
                num=self.b(j),
                den=np.concatenate([[1.0], self.f(j)]),
                n_k=self.orders[j].n_k,
            )
            for j in range(len(self.orders))
        )

    def is_stable(self) -> bool:
        return all(tf.is_stable() for tf in self.transfer_functions())

    def with_values(self, values) -> "ThetaVector":
        return ThetaVector(values=values, orders=self.orders)

    @classmethod
    def from_transfer_functions(cls, tfs) -> "ThetaVector":
        parts = []
        for tf in tfs:
            parts.append(tf.den[1:])
            parts.append(tf.num)
        return cls(
            values=np.concatenate(parts), orders=tuple(tf.orders for tf in tfs)
        )


@dataclass(frozen=True)
class CascadeModel:
    """The three-module cascade plus sensor-noise variances.

    ``lambda1``/``lambda2`` may be zero for noise-free simulation.
    """

    g1: TransferFunction
    g2: TransferFunction
    g3: TransferFunction
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("noise variances must be nonnegative")
        for name in ("g1", "g2", "g3"):
            if not getattr(self, name).is_stable():
                raise InstabilityError(f"module {name} is unstable")

    @property
    def modules(self) -> tuple[TransferFunction, TransferFunction, TransferFunction]:
        return (self.g1, self.g2, self.g3)

    @property
    def orders(self) -> tuple[OrderSpec, OrderSpec, OrderSpec]:
        return (self.g1.orders, self.g2.orders, self.g3.orders)

    def theta(self) -> ThetaVector:
        return ThetaVector.from_transfer_functions(self.modules)

    @classmethod
    def from_theta(
        cls, theta: ThetaVector, lambda1: float = 0.0, lambda2: float = 0.0
    ) -> "CascadeModel":
        g1, g2, g3 = theta.transfer_functions()
        return cls(g1=g1, g2=g2, g3=g3, lambda1=lambda1, lambda2=lambda2)


@dataclass(frozen=True)
class DataRecord:
    """One sampled dataset: both inputs and both noisy outputs, length N."""

    u1: np.ndarray
    u2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray

    def __post_init__(self):
        for name in ("u1", "u2", "y1", "y2"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=float).ravel()
            )
        n = len(self.u1)
        if n < 1:
            raise DimensionError("signals must have at least one sample")
        if not (len(self.u2) == len(self.y1) == len(self.y2) == n):
            raise DimensionError("u1, u2, y1, y2 must share the same length")

    @property
    def n_samples(self) -> int:
        return len(self.u1)


@dataclass(frozen=True)
class InputSpec:
    """Shaping filter applied to unit-variance white noise on each input."""

    shaping: TransferFunction = field(
        default_factory=lambda: TransferFunction(num=[1.0], den=[1.0, -0.9])
    )

    def __post_init__(self):
        if not self.shaping.is_stable():
            raise InstabilityError("input shaping filter is unstable")


def white_noise(n: int, variance: float, seed) -> np.ndarray:
    """Seeded Gaussian white noise, mean 0 and the given variance.

    ``seed`` may be an int or a tuple of ints (sub-stream entropy).
    """
    if n < 1:
        raise ParameterError(f"sample count must be >= 1, got {n}")
    if variance <= 0:
        raise ParameterError(f"variance must be positive, got {variance}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return rng.normal(0.0, np.sqrt(variance), size=n)


def _sub_seed(seed, offset: int) -> tuple:
    if isinstance(seed, (tuple, list)):
        return tuple(seed) + (offset,)
    return (int(seed), offset)


def gen_inputs(n: int, spec: InputSpec, seed) -> tuple[np.ndarray, np.ndarray]:
    """Two mutually independent shaped-noise inputs of length ``n``."""
    e1 = white_noise(n, 1.0, _sub_seed(seed, STREAM_E1U))
    e2 = white_noise(n, 1.0, _sub_seed(seed, STREAM_E2U))
    return filt(spec.shaping, e1), filt(spec.shaping, e2)


def _noise_free_outputs(
    g1: TransferFunction,
    g2: TransferFunction,
    g3: TransferFunction,
    u1: np.ndarray,
    u2: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic cascade response; shared by simulation and residuals."""
    x1 = filt(g1, u1)
    s = filt(g2, x1 + u2)
    return s, filt(g3, s)


def simulate_network(model: CascadeModel, u1, u2, seed) -> DataRecord:
    """Simulate both noisy outputs for the given inputs.

    Sensor noises are drawn from fixed sub-streams of ``seed``; a zero
    variance skips that noise source entirely.
    """
    u1 = np.asarray(u1, dtype=float).ravel()
    u2 = np.asarray(u2, dtype=float).ravel()
    if len(u1) != len(u2):
        raise DimensionError("u1 and u2 must share the same length")
    n = len(u1)
    s, y2 = _noise_free_outputs(model.g1, model.g2, model.g3, u1, u2)
    y1 = s.copy()
    if model.lambda1 > 0:
        y1 += white_noise(n, model.lambda1, _sub_seed(seed, STREAM_E1))
    if model.lambda2 > 0:
        y2 = y2 + white_noise(n, model.lambda2, _sub_seed(seed, STREAM_E2))
    return DataRecord(u1=u1, u2=u2, y1=y1, y2=y2)


def generate_dataset(
    model: CascadeModel,
    n: int,
    seed,
    input_spec: InputSpec | None = None,
    burn_in: int = 0,
) -> DataRecord:
    """Generate inputs and simulate the network in one deterministic step.

    ``burn_in`` extra samples are generated and discarded from the front.
    """
    if burn_in < 0:
        raise ParameterError("burn_in must be nonnegative")
    spec = input_spec if input_spec is not None else InputSpec()
    total = n + burn_in
    u1, u2 = gen_inputs(total, spec, seed)
    rec = simulate_network(model, u1, u2, seed)
    if burn_in == 0:
        return rec
    return DataRecord(
        u1=rec.u1[burn_in:],
        u2=rec.u2[burn_in:],
        y1=rec.y1[burn_in:],
        y2=rec.y2[burn_in:],
    )


RECORD_HEADER = ["t", "u1", "u2", "y1", "y2"]


def save_record_csv(record: DataRecord, path) -> None:
    """Write a dataset as CSV with full double precision (17 significant digits)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_HEADER)
        for t in range(record.n_samples):
            writer.writerow(
                [t]
                + [
                    format(v, ".17g")
                    for v in (record.u1[t], record.u2[t], record.y1[t], record.y2[t])
                ]
            )


def load_record_csv(path) -> DataRecord:
    """Read a dataset written by :func:`save_record_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RECORD_HEADER:
            raise ParameterError(f"unexpected dataset header {header!r}")
        cols = {name: [] for name in RECORD_HEADER[1:]}
        for row in reader:
            if not row:
                continue
            for name, value in zip(RECORD_HEADER[1:], row[1:]):
                cols[name].append(float(value))
    return DataRecord(
        u1=np.array(cols["u1"]),
        u2=np.array(cols["u2"]),
        y1=np.array(cols["y1"]),
        y2=np.array(cols["y2"]),
    )
