"""EDMD with control from (optionally dither-quantized) snapshot data.

The predictor ``z+ = A z + B u`` is the least-squares solution of
``min (1/T) ||Phi+ - G Psi||^2`` with ``Psi = [Phi; U]`` and ``G = [A, B]``.
Snapshot pairs are formed inside each trajectory only.

Quantization modes for :func:`assemble_snapshots`:

``"none"``
    lift the raw states.
``"state-input"``
    dither-quantize states and inputs, then lift the decoded states.
``"observable"``
    lift raw states and dither-quantize every lifted coordinate (and the
    inputs).  With a shared resolution ``eps`` this fit converges to the
    ridge solution with ``lambda = eps**2 / 12``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la

from .dictionary import Dictionary, lift
from .dynamics import TrajectorySet
from .errors import DimensionError, NumericalError, RankDeficientError
from .quantization import (
    DitherStream,
    QuantizationDiagnostics,
    QuantizerSpec,
    build_quantizer,
    dither_quantize_vector,
    quantizer_from_data,
)

__all__ = [
    "MODES",
    "SnapshotSet",
    "LinearPredictor",
    "FitReport",
    "GramAccumulator",
    "default_quantizers",
    "assemble_snapshots",
    "edmd_fit",
    "fit_decoder",
    "ridge_fit",
    "estimate_gap",
    "mismatch_bound",
    "lstsq_tolerance",
]

MODES = ("none", "state-input", "observable")
FORMAT_VERSION = 1


@dataclass
class SnapshotSet:
    """Lifted snapshot matrices ``Phi``, ``PhiPlus`` (N x T) and ``U`` (m x T)."""

    Phi: np.ndarray
    PhiPlus: np.ndarray
    U: np.ndarray
    quantization_tag: dict = field(default_factory=lambda: {"mode": "none"})
    diagnostics: Optional[QuantizationDiagnostics] = None

    def __post_init__(self):
        self.U = np.atleast_2d(self.U)
        if not (self.Phi.shape[1] == self.PhiPlus.shape[1] == self.U.shape[1]):
            raise DimensionError("Phi, PhiPlus and U must have the same number of columns")
        if self.Phi.shape[0] != self.PhiPlus.shape[0]:
            raise DimensionError("Phi and PhiPlus must have the same number of rows")

    @property
    def T(self) -> int:
        return self.Phi.shape[1]

    @property
    def N(self) -> int:
        return self.Phi.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def Psi(self) -> np.ndarray:
        return np.vstack([self.Phi, self.U])

    def scaled(self, c: float) -> "SnapshotSet":
        return SnapshotSet(c * self.Phi, c * self.PhiPlus, c * self.U, dict(self.quantization_tag))


@dataclass
class FitReport:
    residual_rms: float
    rank_used: int
    regularizer_lambda: float
    condition_estimate: float
    tolerance: float = 0.0


@dataclass
class LinearPredictor:
    """Lifted LTI predictor ``z+ = A z + B u``, ``x = C z``."""

    A: np.ndarray
    B: np.ndarray
    C: Optional[np.ndarray] = None
    dictionary: Optional[Dictionary] = None
    meta: dict = field(default_factory=dict)

    @property
    def G(self) -> np.ndarray:
        return np.hstack([self.A, self.B])

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def with_decoder(self, C=None) -> "LinearPredictor":
        """Copy with ``C`` set (defaults to the dictionary's state selector)."""
        if C is None:
            C = self.dictionary.decoder()
        return LinearPredictor(self.A, self.B, np.asarray(C, dtype=float), self.dictionary, dict(self.meta))

    def lift(self, x):
        return lift(self.dictionary, x)

    def save(self, path) -> None:
        """Write an ``.npz`` file: matrix blocks plus a JSON header."""
        header = {
            "format": "koopquant-predictor",
            "version": FORMAT_VERSION,
            "dictionary": None if self.dictionary is None else self.dictionary.to_dict(),
            "meta": self.meta,
        }
        blocks = {"A": self.A, "B": self.B}
        if self.C is not None:
            blocks["C"] = self.C
        # a file handle keeps numpy from appending ".npz" to the name
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header, default=_json_default)), **blocks)

    @classmethod
    def load(cls, path) -> "LinearPredictor":
        with np.load(path) as f:
            header = json.loads(str(f["header"]))
            if header.get("format") != "koopquant-predictor":
                raise ValueError(f"{path} is not a predictor file")
            if header["version"] > FORMAT_VERSION:
                raise ValueError(f"unsupported predictor file version {header['version']}")
            C = f["C"] if "C" in f.files else None
            d = None if header["dictionary"] is None else Dictionary.from_dict(header["dictionary"])
            return cls(f["A"], f["B"], C, d, header.get("meta", {}))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _shared_quantizer(values, b, margin):
    lo, hi = float(np.min(values)), float(np.max(values))
    width = hi - lo if hi > lo else 1.0
    return build_quantizer(lo - margin * width, hi + margin * width, b)


def default_quantizers(
    data: TrajectorySet,
    d: Dictionary,
    b: int,
    mode: str,
    margin: float = 0.05,
    shared: bool = False,
) -> dict:
    """Quantizers ranged on the training data, widened by ``margin`` per side.

    With ``shared=True`` every channel (states or observables, and inputs)
    uses one common range and therefore one common resolution.
    """
    X = np.concatenate(list(data.X), axis=1)
    U = np.concatenate(list(data.U), axis=1)
    if mode == "state-input":
        signal = X
    elif mode == "observable":
        signal = lift(d, X)
    else:
        raise ValueError(f"mode {mode!r} has no quantizers")
    if shared:
        q = _shared_quantizer(np.concatenate([signal.ravel(), U.ravel()]), b, margin)
        return {"signal": [q] * signal.shape[0], "input": [q] * U.shape[0]}
    return {
        "signal": quantizer_from_data(signal, b, margin),
        "input": quantizer_from_data(U, b, margin),
    }


def assemble_snapshots(
    data: TrajectorySet,
    d: Dictionary,
    mode: str = "none",
    word_length: Optional[int] = None,
    quantizers: Optional[dict] = None,
    stream: Optional[DitherStream] = None,
    reuse_snapshots: bool = True,
) -> SnapshotSet:
    """Build ``Phi``, ``PhiPlus`` and ``U`` from a trajectory set.

    Parameters
    ----------
    mode : {"none", "state-input", "observable"}
    word_length : int, optional
        Used to derive data-ranged quantizers when ``quantizers`` is omitted.
    quantizers : dict, optional
        ``{"signal": [...], "input": [...]}`` as returned by
        :func:`default_quantizers`; ``signal`` covers the states
        (``state-input``) or the observables (``observable``).
    stream : DitherStream
        Trajectory ``i`` draws from ``stream.spawn(i)``.
    reuse_snapshots : bool
        Quantize each stored state once and use it in both ``Phi`` and
        ``PhiPlus``.  If False, the two matrices get independent dither.
    """
    if mode not in MODES:
        raise ValueError(f"unknown quantization mode {mode!r}")
    if data.X.shape[1] != d.n:
        raise DimensionError(f"trajectories have state dimension {data.X.shape[1]}, dictionary expects {d.n}")
    if data.X.shape[2] < 2:
        raise ValueError("every trajectory needs at least two states")

    tag: dict = {"mode": mode}
    diag = None
    if mode != "none":
        if quantizers is None:
            if word_length is None:
                raise ValueError("quantized modes need word_length or explicit quantizers")
            quantizers = default_quantizers(data, d, word_length, mode)
        if stream is None:
            raise ValueError("quantized modes need a DitherStream")
        diag = QuantizationDiagnostics()
        tag.update({
            "word_length": word_length,
            "signal_quantizers": [q.to_dict() for q in quantizers["signal"]],
            "input_quantizers": [q.to_dict() for q in quantizers["input"]],
            "dither_seed": stream.seed,
            "dither_spawn_key": list(stream.spawn_key),
            "reuse_snapshots": reuse_snapshots,
        })

    def quantize(qs, values, sub):
        return dither_quantize_vector(qs, values, sub, diag)

    Phi, PhiPlus, Us = [], [], []
    for i, (X, U) in enumerate(data.trajectories):
        if mode == "none":
            Z = lift(d, X)
            Phi.append(Z[:, :-1])
            PhiPlus.append(Z[:, 1:])
            Us.append(U)
            continue
        sub = stream.spawn(i)
        qsig, qin = quantizers["signal"], quantizers["input"]
        if mode == "state-input":
            if reuse_snapshots:
                Z = lift(d, quantize(qsig, X, sub))
                now, nxt = Z[:, :-1], Z[:, 1:]
            else:
                now = lift(d, quantize(qsig, X[:, :-1], sub))
                nxt = lift(d, quantize(qsig, X[:, 1:], sub))
        else:
            Z = lift(d, X)
            if reuse_snapshots:
                Zq = quantize(qsig, Z, sub)
                now, nxt = Zq[:, :-1], Zq[:, 1:]
            else:
                now = quantize(qsig, Z[:, :-1], sub)
                nxt = quantize(qsig, Z[:, 1:], sub)
        Phi.append(now)
        PhiPlus.append(nxt)
        Us.append(quantize(qin, U, sub))

    if diag is not None:
        tag["saturated"] = diag.saturated
        tag["quantized_values"] = diag.total
    return SnapshotSet(
        np.concatenate(Phi, axis=1),
        np.concatenate(PhiPlus, axis=1),
        np.concatenate(Us, axis=1),
        tag,
        diag,
    )


def lstsq_tolerance(rows: int, cols: int) -> float:
    """Relative singular-value cutoff ``max(rows, cols) * machine_eps``."""
    return max(rows, cols) * np.finfo(float).eps


def _solve_lstsq(M, rhs):
    """Minimum-norm least squares ``M @ X ~ rhs`` with rank truncation."""
    tol = lstsq_tolerance(*M.shape)
    sol, _, rank, sv = la.lstsq(M, rhs, cond=tol, lapack_driver="gelsd")
    if not np.all(np.isfinite(sol)):
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        raise NumericalError(f"least-squares solution is not finite (condition ~ {cond:.3g})")
    return sol, int(rank), sv, tol


def _report(s: SnapshotSet, G, rank, sv, tol, lam) -> FitReport:
    R = s.PhiPlus - G @ s.Psi
    smin = sv[-1] if sv.size else 0.0
    cond = float(sv[0] / smin) if smin > 0 else float("inf")
    return FitReport(
        residual_rms=float(np.sqrt(np.sum(R * R) / s.T)),
        rank_used=rank,
        regularizer_lambda=float(lam),
        condition_estimate=cond,
        tolerance=tol,
    )


def _predictor(G, N, tag, lam, d=None) -> LinearPredictor:
    meta = {"quantization": tag, "lambda": float(lam)}
    return LinearPredictor(G[:, :N].copy(), G[:, N:].copy(), None, d, meta)


def edmd_fit(s: SnapshotSet, dictionary: Optional[Dictionary] = None):
    """Unregularized EDMD-with-control fit.

    Returns
    -------
    LinearPredictor
        ``A``, ``B``; ``C`` is left unset.
    FitReport
    """
    Gt, rank, sv, tol = _solve_lstsq(s.Psi.T, s.PhiPlus.T)
    G = Gt.T
    return _predictor(G, s.N, s.quantization_tag, 0.0, dictionary), _report(s, G, rank, sv, tol, 0.0)


def ridge_fit(s: SnapshotSet, lam: float, dictionary: Optional[Dictionary] = None):
    """Minimizer of ``(1/T) ||PhiPlus - G Psi||^2 + lam ||G||^2``.

    Closed form ``G = PhiPlus Psi^T (Psi Psi^T + T lam I)^{-1}``, computed as
    an augmented least-squares problem.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0:
        pred, rep = edmd_fit(s, dictionary)
        return pred, rep
    Psi = s.Psi
    p = Psi.shape[0]
    M = np.vstack([Psi.T, np.sqrt(s.T * lam) * np.eye(p)])
    rhs = np.vstack([s.PhiPlus.T, np.zeros((p, s.N))])
    Gt, rank, sv, tol = _solve_lstsq(M, rhs)
    G = Gt.T
    return _predictor(G, s.N, s.quantization_tag, lam, dictionary), _report(s, G, rank, sv, tol, lam)


def fit_decoder(X, Phi) -> np.ndarray:
    """Least-squares decoder ``C = argmin (1/T) ||X - C Phi||^2``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Phi = np.asarray(Phi, dtype=float)
    if X.shape[1] != Phi.shape[1]:
        raise DimensionError("X and Phi must have the same number of columns")
    Ct, *_ = _solve_lstsq(Phi.T, X.T)
    return Ct.T


class GramAccumulator:
    """Streaming sums ``Psi Psi^T`` and ``PhiPlus Psi^T`` for large data sets.

    The fit is solved from the Gram matrices with an eigenvalue cutoff, which
    squares the condition number; prefer :func:`edmd_fit` when the snapshots
    fit in memory.
    """

    def __init__(self, N: int, m: int):
        self.N, self.m = N, m
        self.gram = np.zeros((N + m, N + m))
        self.cross = np.zeros((N, N + m))
        self.target_sq = 0.0
        self.T = 0

    def add(self, s: SnapshotSet) -> None:
        Psi = s.Psi
        self.gram += Psi @ Psi.T
        self.cross += s.PhiPlus @ Psi.T
        self.target_sq += float(np.sum(s.PhiPlus ** 2))
        self.T += s.T

    def fit(self, lam: float = 0.0, dictionary: Optional[Dictionary] = None) -> LinearPredictor:
        if self.T == 0:
            raise ValueError("no data accumulated")
        w, V = np.linalg.eigh(self.gram + self.T * lam * np.eye(self.N + self.m))
        cut = w.max() * lstsq_tolerance(self.N + self.m, self.T) ** 0.5
        inv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
        G = (self.cross @ V) * inv @ V.T
        return _predictor(G, self.N, {"mode": "accumulated"}, lam, dictionary)


def estimate_gap(G: LinearPredictor, Gq: LinearPredictor):
    """Relative Frobenius errors of ``Gq`` against reference ``G``.

    Returns
    -------
    (relA, relB, relG) : tuple of float
    """
    if G.A.shape != Gq.A.shape or G.B.shape != Gq.B.shape:
        raise DimensionError("predictors have different shapes")
    out = []
    for ref, est in ((G.A, Gq.A), (G.B, Gq.B), (G.G, Gq.G)):
        denom = np.linalg.norm(ref)
        if denom == 0:
            raise ZeroDivisionError("reference block has zero norm")
        out.append(float(np.linalg.norm(est - ref) / denom))
    return tuple(out)


def mismatch_bound(s: SnapshotSet, eps: float) -> float:
    """Upper bound ``(eps^2/12) ||(Psi Psi^T / T + eps^2/12 I)^{-1}||_F``.

    Bounds the relative gap between the quantized-observable fit and the
    unquantized fit in the large-data limit.

    Raises
    ------
    RankDeficientError
        If ``Psi`` does not have full row rank.
    """
    Psi = s.Psi
    p, T = Psi.shape
    if T < p:
        raise RankDeficientError(f"Psi has {p} rows but only {T} columns")
    sv = la.svdvals(Psi)
    if sv[-1] <= sv[0] * lstsq_tolerance(p, T):
        raise RankDeficientError(f"Psi is numerically rank deficient (sigma_min/sigma_max = {sv[-1] / sv[0]:.3g})")
    if eps == 0:
        return 0.0
    c = eps ** 2 / 12.0
    lam = sv ** 2 / T
    return float(c * np.sqrt(np.sum(1.0 / (lam + c) ** 2)))
