"""Lifting dictionaries for EDMD.

Two families are provided:

* ``state+tps-rbf``: the state itself followed by thin-plate spline radial
  basis functions ``psi_c(x) = ||x - c||^2 log ||x - c||``.
* ``kdv-poly``: for a periodic mesh state ``y``, the values ``y_i``, squares
  ``y_i^2``, neighbour products ``y_i y_{i+1}`` (indices mod mesh) and a
  constant 1.

Lifting works column-wise on ``(n, T)`` arrays as well as on single states.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError
from .quantization import (
    DitherStream,
    QuantizationDiagnostics,
    QuantizerLike,
    dither_quantize_vector,
    quantizer_from_data,
)

__all__ = [
    "Dictionary",
    "make_tps_dictionary",
    "make_kdv_dictionary",
    "make_custom_dictionary",
    "sample_centers",
    "tps",
    "lift",
    "lift_quantized_observables",
    "observable_quantizers",
]

TPS = "state+tps-rbf"
KDV = "kdv-poly"
CUSTOM = "custom"


def tps(r2):
    """Thin-plate spline ``r^2 log r`` evaluated from squared radius.

    The removable singularity at ``r = 0`` is filled with its limit 0.
    """
    r2 = np.asarray(r2, dtype=float)
    out = np.zeros_like(r2)
    pos = r2 > 0
    out[pos] = 0.5 * r2[pos] * np.log(r2[pos])
    return out


class Dictionary:
    """An ordered list of lifting functions ``phi^1 .. phi^N``.

    Instances are immutable after construction; use the ``make_*`` factories.

    Attributes
    ----------
    kind : str
        ``"state+tps-rbf"``, ``"kdv-poly"`` or ``"custom"``.
    n : int
        State dimension.
    N : int
        Lifted dimension.
    centers : (n_centers, n) ndarray or None
        RBF centers for the TPS kind.
    has_state_block : bool
        Whether the first ``n`` lifted coordinates are the state itself.
    """

    def __init__(self, kind, n, N, centers=None, funcs=None, meta=None):
        self.kind = kind
        self.n = int(n)
        self.N = int(N)
        self.centers = None if centers is None else np.array(centers, dtype=float)
        if self.centers is not None:
            self.centers.setflags(write=False)
        self._funcs = None if funcs is None else tuple(funcs)
        self.meta = dict(meta or {})
        self.has_state_block = kind in (TPS, KDV) or bool(self.meta.get("state_block"))

    def __repr__(self):
        return f"Dictionary(kind={self.kind!r}, n={self.n}, N={self.N})"

    def __call__(self, x):
        return lift(self, x)

    def decoder(self) -> np.ndarray:
        """Selector ``[I_n, 0]`` recovering the state from the lift."""
        if not self.has_state_block:
            raise ValueError("dictionary has no state block; fit a decoder from data")
        C = np.zeros((self.n, self.N))
        C[:, : self.n] = np.eye(self.n)
        return C

    def jacobian(self, x) -> np.ndarray:
        """Jacobian ``d phi / d x`` of shape ``(N, n)`` at a single state."""
        x = _check_state(self, x)
        if self.kind == TPS:
            diff = x[None, :] - self.centers
            r2 = np.sum(diff ** 2, axis=1)
            scale = np.zeros_like(r2)
            pos = r2 > 0
            scale[pos] = np.log(r2[pos]) + 1.0
            return np.vstack([np.eye(self.n), scale[:, None] * diff])
        if self.kind == KDV:
            m = self.n
            J = np.zeros((self.N, m))
            idx = np.arange(m)
            J[idx, idx] = 1.0
            J[m + idx, idx] = 2.0 * x
            nxt = (idx + 1) % m
            J[2 * m + idx, idx] += x[nxt]
            J[2 * m + idx, nxt] += x
            return J
        raise NotImplementedError("analytic Jacobian only for built-in dictionaries")

    def to_dict(self) -> dict:
        """Serializable descriptor (custom dictionaries are not portable)."""
        if self.kind == CUSTOM:
            raise ValueError("custom dictionaries cannot be serialized")
        d = {"kind": self.kind, "n": self.n, "N": self.N}
        if self.centers is not None:
            d["centers"] = self.centers.tolist()
        d.update({k: v for k, v in self.meta.items() if k != "state_block"})
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Dictionary":
        meta = {k: v for k, v in d.items() if k not in ("kind", "n", "N", "centers", "mesh")}
        if d["kind"] == TPS:
            out = make_tps_dictionary(d["n"], d["centers"])
        elif d["kind"] == KDV:
            out = make_kdv_dictionary(d.get("mesh", d["n"]))
        else:
            raise ValueError(f"unknown dictionary kind {d['kind']!r}")
        out.meta.update(meta)
        return out


def sample_centers(n: int, count: int, rng, low=-1.0, high=1.0) -> np.ndarray:
    """Draw ``count`` RBF centers uniformly from the box ``[low, high]^n``."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return rng.uniform(low, high, size=(count, n))


def make_tps_dictionary(n: int, centers) -> Dictionary:
    """State plus one thin-plate spline RBF per center; ``N = n + len(centers)``."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.size == 0:
        raise DimensionError("at least one RBF center is required")
    if centers.shape[1] != n:
        raise DimensionError(f"centers have dimension {centers.shape[1]}, expected {n}")
    return Dictionary(TPS, n, n + centers.shape[0], centers=centers)


def make_kdv_dictionary(mesh: int) -> Dictionary:
    """Values, squares, periodic neighbour products and a constant; ``N = 3 mesh + 1``."""
    mesh = int(mesh)
    if mesh < 2:
        raise ValueError("mesh must have at least 2 points")
    return Dictionary(KDV, mesh, 3 * mesh + 1, meta={"mesh": mesh})


def make_custom_dictionary(
    n: int, funcs: Sequence[Callable[[np.ndarray], np.ndarray]], state_block: bool = False
) -> Dictionary:
    """Dictionary from scalar callables, each mapping ``(n, T)`` states to ``(T,)``.

    Set ``state_block`` when the first ``n`` functions are the coordinates.
    """
    return Dictionary(CUSTOM, n, len(funcs), funcs=funcs, meta={"state_block": state_block})


def _check_state(d: Dictionary, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != d.n:
        raise DimensionError(f"state has dimension {x.shape[0]}, dictionary expects {d.n}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite state passed to lift")
    return x


def lift(d: Dictionary, x) -> np.ndarray:
    """Evaluate the dictionary at a state ``(n,)`` or a batch of states ``(n, T)``."""
    x = _check_state(d, x)
    single = x.ndim == 1
    X = x[:, None] if single else x
    if d.kind == TPS:
        # accumulate per coordinate: exact and memory-light for small n
        r2 = np.zeros((d.centers.shape[0], X.shape[1]))
        for k in range(d.n):
            r2 += (X[k][None, :] - d.centers[:, k][:, None]) ** 2
        Z = np.vstack([X, tps(r2)])
    elif d.kind == KDV:
        shifted = np.roll(X, -1, axis=0)
        Z = np.vstack([X, X ** 2, X * shifted, np.ones((1, X.shape[1]))])
    else:
        Z = np.vstack([np.broadcast_to(np.asarray(f(X), dtype=float), (X.shape[1],)) for f in d._funcs])
    return Z[:, 0] if single else Z


def observable_quantizers(d: Dictionary, states, b: int, margin: float = 0.05):
    """Per-observable quantizers ranged on the lifted training data (widened by ``margin``)."""
    return quantizer_from_data(lift(d, states), b, margin=margin)


def lift_quantized_observables(
    d: Dictionary,
    x,
    q: QuantizerLike,
    stream: DitherStream,
    diagnostics: QuantizationDiagnostics | None = None,
) -> np.ndarray:
    """Lift, then dither-quantize each observable with its own dither sample.

    ``q`` is a shared quantizer or a list of ``N`` quantizers.
    """
    return dither_quantize_vector(q, lift(d, x), stream, diagnostics)
