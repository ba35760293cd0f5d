"""Uniform mid-point quantizers, subtractive dither and error statistics.

A ``b``-bit quantizer on ``(x_min, x_max)`` has resolution
``eps = (x_max - x_min) / 2**b``.  Values are encoded to integer cell indices
``floor((x - x_min) / eps)`` (clamped to ``0 .. 2**b - 1``) and decoded to the
cell mid-point.  Dithered quantization adds ``w ~ U[-eps/2, eps/2]`` before
encoding and subtracts it after decoding, which makes the error independent
of the signal and uniform on ``[-eps/2, eps/2]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DimensionError, InvalidRangeError, InvalidWordLengthError

__all__ = [
    "QuantizerSpec",
    "DitherStream",
    "QuantizationDiagnostics",
    "MomentReport",
    "build_quantizer",
    "quantizer_from_data",
    "dither_quantize",
    "dither_quantize_vector",
    "error_moment_report",
]

MAX_WORD_LENGTH = 32


@dataclass(frozen=True)
class QuantizerSpec:
    """A uniform ``b``-bit mid-point quantizer.

    Use :func:`build_quantizer` rather than constructing this directly; the
    resolution is derived from the other fields.
    """

    x_min: float
    x_max: float
    word_length_b: int
    resolution_eps: float

    @property
    def levels(self) -> int:
        return 2 ** self.word_length_b

    def encode(self, x):
        """Cell index of ``x`` with saturation (the extended quantizer)."""
        x = np.asarray(x, dtype=float)
        code = np.floor((x - self.x_min) / self.resolution_eps)
        return np.clip(code, 0, self.levels - 1).astype(np.int64)

    def decode(self, code):
        """Mid-point of cell ``code``."""
        code = np.asarray(code, dtype=float)
        return self.resolution_eps * code + self.x_min + 0.5 * self.resolution_eps

    def quantize(self, x):
        """Plain (undithered) quantization ``decode(encode(x))``."""
        return self.decode(self.encode(x))

    def saturated(self, x):
        """Boolean mask of values outside ``[x_min, x_max]``."""
        x = np.asarray(x, dtype=float)
        return (x < self.x_min) | (x > self.x_max)

    def to_dict(self) -> dict:
        return {
            "x_min": float(self.x_min),
            "x_max": float(self.x_max),
            "word_length_b": int(self.word_length_b),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizerSpec":
        return build_quantizer(d["x_min"], d["x_max"], d["word_length_b"])


def build_quantizer(x_min: float, x_max: float, b: int) -> QuantizerSpec:
    """Create a ``b``-bit quantizer for the range ``(x_min, x_max)``.

    Raises
    ------
    InvalidRangeError
        If ``x_min >= x_max`` or either bound is not finite.
    InvalidWordLengthError
        If ``b`` is not an integer in ``1..32``.
    """
    x_min = float(x_min)
    x_max = float(x_max)
    if not (np.isfinite(x_min) and np.isfinite(x_max)) or x_min >= x_max:
        raise InvalidRangeError(f"invalid quantizer range ({x_min}, {x_max})")
    if isinstance(b, bool) or int(b) != b or not 1 <= int(b) <= MAX_WORD_LENGTH:
        raise InvalidWordLengthError(f"word length must be in 1..{MAX_WORD_LENGTH}, got {b!r}")
    b = int(b)
    # division by a power of two is exact in binary floating point
    eps = (x_max - x_min) / 2.0 ** b
    return QuantizerSpec(x_min, x_max, b, eps)


def quantizer_from_data(values, b: int, margin: float = 0.05) -> list[QuantizerSpec]:
    """One quantizer per row of ``values``, ranged on the row's min/max.

    The range is widened by ``margin`` times its width on each side so that
    dithered values stay out of the saturation region.  Constant rows get a
    unit-width range around their value.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    specs = []
    for row in values:
        lo, hi = float(np.min(row)), float(np.max(row))
        width = hi - lo
        if width <= 0.0:
            lo, hi, width = lo - 0.5, hi + 0.5, 1.0
        specs.append(build_quantizer(lo - margin * width, hi + margin * width, b))
    return specs


class DitherStream:
    """Seeded source of uniform dither samples.

    Backed by the counter-based Philox generator, so the same seed always
    yields the same sequence.  :meth:`spawn` derives statistically
    independent child streams for parallel trials.

    Parameters
    ----------
    seed : int or numpy.random.SeedSequence
        Master seed of the stream.
    """

    def __init__(self, seed):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self._rng = np.random.Generator(np.random.Philox(self._seq))
        self.consumed = 0

    @property
    def seed(self):
        return self._seq.entropy

    @property
    def spawn_key(self) -> tuple:
        return tuple(self._seq.spawn_key)

    def spawn(self, *key: int) -> "DitherStream":
        """Child stream identified by an integer key path."""
        child = np.random.SeedSequence(
            self._seq.entropy, spawn_key=self._seq.spawn_key + tuple(int(k) for k in key)
        )
        return DitherStream(child)

    def unit(self, shape) -> np.ndarray:
        """Samples uniform on ``[-1/2, 1/2)``."""
        out = self._rng.random(shape) - 0.5
        self.consumed += out.size
        return out

    def sample(self, eps, shape) -> np.ndarray:
        """Dither samples uniform on ``[-eps/2, eps/2)``.

        ``eps`` may be an array broadcastable against ``shape``.
        """
        return np.asarray(eps, dtype=float) * self.unit(shape)


@dataclass
class QuantizationDiagnostics:
    """Running count of quantized values that hit the saturation region."""

    saturated: int = 0
    total: int = 0

    def record(self, mask) -> None:
        mask = np.asarray(mask)
        self.saturated += int(np.count_nonzero(mask))
        self.total += int(mask.size)

    def merge(self, other: "QuantizationDiagnostics") -> None:
        self.saturated += other.saturated
        self.total += other.total


def dither_quantize(q: QuantizerSpec, x, w, diagnostics: QuantizationDiagnostics | None = None):
    """Decoded dithered value ``Q(x + w) - w``.

    Works elementwise on scalars or arrays.  Values whose dithered input falls
    outside the quantizer range are clamped; pass ``diagnostics`` to count
    them.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    shifted = x + w
    if diagnostics is not None:
        diagnostics.record(q.saturated(shifted))
    out = q.quantize(shifted) - w
    return float(out) if out.ndim == 0 else out


QuantizerLike = Union[QuantizerSpec, Sequence[QuantizerSpec]]


def _coordinate_arrays(q: QuantizerLike, dim: int):
    """Stack per-coordinate quantizer parameters as column vectors."""
    if isinstance(q, QuantizerSpec):
        specs = [q] * dim
    else:
        specs = list(q)
        if len(specs) != dim:
            raise DimensionError(f"{len(specs)} quantizers given for a signal of dimension {dim}")
    lo = np.array([s.x_min for s in specs])
    hi = np.array([s.x_max for s in specs])
    eps = np.array([s.resolution_eps for s in specs])
    levels = np.array([s.levels for s in specs], dtype=float)
    return lo, hi, eps, levels


def dither_quantize_vector(
    q: QuantizerLike,
    x,
    stream: DitherStream,
    diagnostics: QuantizationDiagnostics | None = None,
) -> np.ndarray:
    """Dither-quantize each coordinate (row) of ``x`` independently.

    Parameters
    ----------
    q : QuantizerSpec or sequence of QuantizerSpec
        Shared quantizer, or one per coordinate (row of ``x``).
    x : (dim,) or (dim, T) array_like
        Signal; rows are coordinates, columns time samples.
    stream : DitherStream
        Consumes exactly ``x.size`` samples.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x2 = x[:, None] if squeeze else x
    if x2.ndim != 2:
        raise DimensionError("signal must be a vector or a (dim, T) matrix")
    lo, hi, eps, levels = _coordinate_arrays(q, x2.shape[0])
    lo, hi, eps, levels = lo[:, None], hi[:, None], eps[:, None], levels[:, None]
    w = stream.sample(eps, x2.shape)
    shifted = x2 + w
    if diagnostics is not None:
        diagnostics.record((shifted < lo) | (shifted > hi))
    code = np.clip(np.floor((shifted - lo) / eps), 0, levels - 1)
    out = eps * code + lo + 0.5 * eps - w
    return out[:, 0] if squeeze else out


@dataclass
class MomentReport:
    """Empirical quantization-error moments against their dithered targets.

    Targets are mean 0, variance ``eps**2 / 12`` and zero lag-1 and
    cross-coordinate covariance.  z-scores use the exact sampling standard
    deviation of each statistic under i.i.d. uniform errors.
    """

    eps: float
    n_samples: int
    mean: np.ndarray
    variance: np.ndarray
    lag1: np.ndarray
    cross: np.ndarray
    z_mean: np.ndarray
    z_variance: np.ndarray
    z_lag1: np.ndarray
    z_cross: np.ndarray
    target_variance: float = field(init=False)
    degenerate: bool = False

    def __post_init__(self):
        self.target_variance = self.eps ** 2 / 12.0

    def max_abs_z(self) -> float:
        parts = [self.z_mean, self.z_variance, self.z_lag1]
        off = self.z_cross[~np.eye(self.z_cross.shape[0], dtype=bool)]
        parts.append(off)
        vals = np.concatenate([np.ravel(p) for p in parts])
        vals = vals[np.isfinite(vals)]
        return float(np.max(np.abs(vals))) if vals.size else 0.0

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "n_samples": self.n_samples,
            "target_variance": self.target_variance,
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            "lag1": self.lag1.tolist(),
            "cross": self.cross.tolist(),
            "z_mean": self.z_mean.tolist(),
            "z_variance": self.z_variance.tolist(),
            "z_lag1": self.z_lag1.tolist(),
            "z_cross": self.z_cross.tolist(),
            "degenerate": self.degenerate,
        }


def error_moment_report(errors, eps: float) -> MomentReport:
    """Compare realized quantization errors with the dithered-error law.

    Parameters
    ----------
    errors : (dim, T) or (T,) array_like
        Realized errors, coordinates along rows and time along columns.
    eps : float
        Quantizer resolution the errors were produced with.
    """
    e = np.atleast_2d(np.asarray(errors, dtype=float))
    if e.size == 0:
        raise ValueError("empty error sample set")
    dim, T = e.shape
    s2 = eps ** 2 / 12.0
    mean = e.mean(axis=1)
    var = e.var(axis=1)
    lag1 = (e[:, :-1] * e[:, 1:]).mean(axis=1) if T > 1 else np.full(dim, np.nan)
    cross = (e @ e.T) / T
    degenerate = bool(np.any(var == 0.0))

    with np.errstate(divide="ignore", invalid="ignore"):
        z_mean = mean / np.sqrt(s2 / T)
        # Var(e^2) = eps^4/80 - (eps^2/12)^2 = eps^4/180 for uniform e
        z_var = (var - s2) / np.sqrt(eps ** 4 / 180.0 / T)
        z_lag1 = lag1 / (s2 / np.sqrt(max(T - 1, 1)))
        z_cross = cross / (s2 / np.sqrt(T))
    np.fill_diagonal(z_cross, np.nan)
    return MomentReport(
        eps=float(eps),
        n_samples=T,
        mean=mean,
        variance=var,
        lag1=lag1,
        cross=cross,
        z_mean=z_mean,
        z_variance=z_var,
        z_lag1=z_lag1,
        z_cross=z_cross,
        degenerate=degenerate,
    )
