"""Open-loop rollouts of lifted linear predictors and their error metric."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import TrajectorySet
from .errors import DimensionError, NumericalError
from .ident import LinearPredictor

__all__ = [
    "PredictionRun",
    "rollout",
    "rollout_lifted",
    "prediction_error",
    "evaluate_predictor",
    "DENOMINATOR_FLOOR",
]

DENOMINATOR_FLOOR = 1e-9


def rollout_lifted(A, B, z0, U) -> np.ndarray:
    """Lifted trajectory ``z_{t+1} = A z_t + B u_t``; returns ``(N, T + 1)``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Z = np.empty((A.shape[0], U.shape[1] + 1))
    Z[:, 0] = z0
    for t in range(U.shape[1]):
        Z[:, t + 1] = A @ Z[:, t] + B @ U[:, t]
        if not np.all(np.isfinite(Z[:, t + 1])):
            raise NumericalError(f"rollout diverged at step {t}")
    return Z


def rollout(p: LinearPredictor, x0, U) -> np.ndarray:
    """Predicted states ``C z_t`` from ``z_0 = lift(x0)``; shape ``(n, T + 1)``."""
    if p.C is None or p.dictionary is None:
        raise ValueError("rollout needs a predictor with a decoder and a dictionary")
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[0] != p.m:
        raise DimensionError(f"input has {U.shape[0]} rows, predictor expects {p.m}")
    return p.C @ rollout_lifted(p.A, p.B, p.lift(x0), U)


@dataclass
class PredictionRun:
    """Predicted and true states over one horizon.

    ``per_step_rel_error[t]`` is ``||xhat_t - x_t|| / ||x_t||`` for
    ``t = 0 .. T-1``; steps whose true state norm is below
    ``DENOMINATOR_FLOOR`` are NaN and counted in ``skipped``.
    """

    predicted_states: np.ndarray
    true_states: np.ndarray
    per_step_rel_error: np.ndarray = field(init=False)
    skipped: int = field(init=False)

    def __post_init__(self):
        if self.predicted_states.shape != self.true_states.shape:
            raise DimensionError("predicted and true states differ in shape")
        T = self.true_states.shape[1] - 1
        num = np.linalg.norm(self.predicted_states[:, :T] - self.true_states[:, :T], axis=0)
        den = np.linalg.norm(self.true_states[:, :T], axis=0)
        ok = den >= DENOMINATOR_FLOOR
        err = np.full(T, np.nan)
        err[ok] = num[ok] / den[ok]
        self.per_step_rel_error = err
        self.skipped = int(np.count_nonzero(~ok))

    def to_csv(self, path) -> None:
        n = self.true_states.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"xhat{i}" for i in range(n)] + ["rel_error"])
            for t in range(self.true_states.shape[1]):
                e = self.per_step_rel_error[t] if t < len(self.per_step_rel_error) else float("nan")
                w.writerow([t] + [repr(float(v)) for v in self.true_states[:, t]]
                           + [repr(float(v)) for v in self.predicted_states[:, t]] + [repr(float(e))])


def prediction_error(run: PredictionRun) -> float:
    """Time-averaged relative prediction error over the non-skipped steps."""
    valid = run.per_step_rel_error[np.isfinite(run.per_step_rel_error)]
    if valid.size == 0:
        raise ValueError("every step was skipped (true state norm ~ 0)")
    return float(valid.mean())


def evaluate_predictor(p: LinearPredictor, data: TrajectorySet, horizon=None) -> float:
    """Mean of :func:`prediction_error` over all trajectories in ``data``."""
    errs = []
    for X, U in data.trajectories:
        T = U.shape[1] if horizon is None else min(horizon, U.shape[1])
        run = PredictionRun(rollout(p, X[:, 0], U[:, :T]), X[:, : T + 1])
        errs.append(prediction_error(run))
    return float(np.mean(errs))
