"""Condensed linear MPC on a lifted predictor, run against the true plant.

At each step the controller lifts the measured state, predicts
``x_t = C z_t`` with ``z_{t+1} = A z_t + B u_t`` over ``horizon`` steps and
minimizes::

    sum_{t=0}^{horizon} (C z_t - r_t)' Q (C z_t - r_t) + u_t' R u_t

over the stacked inputs (``u_horizon`` is dropped; its optimum is zero).
Input bounds are hard; state bounds on ``C z`` are softened with an L1
penalty of weight ``soft_weight_factor * max(Q)`` per unit violation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .dictionary import lift
from .dynamics import PlantModel
from .errors import DimensionError, DivergenceError
from .ident import LinearPredictor
from .qp import QpProblem, QpSolution, solve_qp
from .quantization import DitherStream, dither_quantize_vector

__all__ = [
    "MpcConfig",
    "LinearMpc",
    "ClosedLoopResult",
    "condense",
    "run_closed_loop",
    "tracking_cost",
    "step_reference",
]

Reference = Union[np.ndarray, Callable[[int], np.ndarray]]


def _weight(w, dim):
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        return float(w) * np.eye(dim)
    if w.ndim == 1:
        return np.diag(w)
    return w


@dataclass
class MpcConfig:
    """Tracking MPC settings.

    ``reference`` is either an ``(n, K)`` array indexed by time step (the last
    column is held beyond ``K``) or a callable mapping a step index to an
    ``n``-vector.  The controller previews the true reference over its horizon.
    """

    Q: np.ndarray
    R: np.ndarray
    horizon: int
    input_bounds: np.ndarray
    state_bounds: Optional[np.ndarray] = None
    reference: Optional[Reference] = None
    soft_weight_factor: float = 1e6
    hessian_floor: float = 0.0

    def __post_init__(self):
        # a vector weight is a diagonal, a scalar a 1 x 1 matrix
        self.Q, self.R = (np.atleast_2d(np.diag(W) if W.ndim == 1 else W)
                          for W in (np.asarray(self.Q, dtype=float), np.asarray(self.R, dtype=float)))
        n, m = self.Q.shape[0], self.R.shape[0]
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        for name, W in (("Q", self.Q), ("R", self.R)):
            if not np.allclose(W, W.T):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(W)) < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        self.input_bounds = np.asarray(self.input_bounds, dtype=float).reshape(m, 2)
        if self.state_bounds is None:
            self.state_bounds = np.tile([-np.inf, np.inf], (n, 1))
        self.state_bounds = np.asarray(self.state_bounds, dtype=float).reshape(n, 2)
        for b in (self.input_bounds, self.state_bounds):
            if np.any(b[:, 0] > b[:, 1]):
                raise ValueError("empty bound interval")

    @classmethod
    def for_plant(cls, plant: PlantModel, reference=None, **overrides) -> "MpcConfig":
        """Configuration from the plant's default weights and constraints."""
        d = dict(plant.mpc_defaults)
        d.update(overrides)
        kw = {
            "Q": _weight(d.pop("Q"), plant.n),
            "R": _weight(d.pop("R"), plant.m),
            "horizon": d.pop("horizon"),
            "input_bounds": d.pop("input_bounds", plant.input_bounds),
            "state_bounds": d.pop("state_bounds", plant.state_bounds),
            "reference": reference,
        }
        if plant.name == "kdv":
            kw["hessian_floor"] = 1e-9
        kw.update(d)
        return cls(**kw)

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def m(self):
        return self.R.shape[0]

    def reference_at(self, t: int) -> np.ndarray:
        if self.reference is None:
            return np.zeros(self.n)
        if callable(self.reference):
            return np.asarray(self.reference(t), dtype=float).reshape(self.n)
        ref = np.asarray(self.reference, dtype=float).reshape(self.n, -1)
        return ref[:, min(t, ref.shape[1] - 1)]

    def reference_window(self, t: int) -> np.ndarray:
        """References for steps ``t .. t + horizon`` as ``(horizon + 1, n)``."""
        return np.stack([self.reference_at(t + k) for k in range(self.horizon + 1)])


def step_reference(levels, switch_every: int, n: int, coordinate: int = 0, total: Optional[int] = None):
    """Piecewise-constant reference cycling through ``levels`` on one coordinate."""
    levels = list(levels)

    def ref(t):
        r = np.zeros(n)
        r[coordinate] = levels[(t // switch_every) % len(levels)]
        return r

    if total is None:
        return ref
    return np.stack([ref(t) for t in range(total)], axis=1)


class LinearMpc:
    """Condensed MPC for a fixed predictor; the prediction matrices are cached.

    ``Theta`` maps stacked inputs to stacked outputs ``C z_1 .. C z_H`` and
    ``Gamma`` maps ``z_0`` to the free response.
    """

    def __init__(self, p: LinearPredictor, cfg: MpcConfig):
        if p.C is None:
            raise ValueError("predictor needs a decoder C")
        A, B, C = p.A, p.B, p.C
        n, N = C.shape
        m = B.shape[1]
        if A.shape != (N, N) or B.shape[0] != N or cfg.n != n or cfg.m != m:
            raise DimensionError("predictor and MPC configuration dimensions disagree")
        H_ = cfg.horizon
        self.p, self.cfg = p, cfg
        self.n, self.m, self.N = n, m, N

        Gamma = np.empty((H_ * n, N))
        markov = np.empty((H_, n, m))
        CA = C.copy()
        for k in range(H_):
            markov[k] = CA @ B  # C A^k B
            CA = CA @ A
            Gamma[k * n:(k + 1) * n] = CA  # C A^(k+1)
        Theta = np.zeros((H_ * n, H_ * m))
        for i in range(H_):
            for j in range(i + 1):
                Theta[i * n:(i + 1) * n, j * m:(j + 1) * m] = markov[i - j]
        self.Gamma, self.Theta = Gamma, Theta

        self.Qbar = np.kron(np.eye(H_), cfg.Q)
        Rbar = np.kron(np.eye(H_), cfg.R)
        QT = self.Qbar @ Theta
        self.H = 2.0 * (Theta.T @ QT + Rbar)
        self.H = 0.5 * (self.H + self.H.T)
        if cfg.hessian_floor:
            self.H += cfg.hessian_floor * np.eye(H_ * m)
        self._QT = QT

        lo = np.tile(cfg.input_bounds[:, 0], H_)
        hi = np.tile(cfg.input_bounds[:, 1], H_)
        self.lb, self.ub = lo, hi
        sb = cfg.state_bounds
        constrained = np.flatnonzero(np.isfinite(sb[:, 0]) | np.isfinite(sb[:, 1]))
        self.rows = (np.arange(H_)[:, None] * n + constrained[None, :]).ravel()
        self.row_lo = np.tile(sb[constrained, 0], H_)
        self.row_hi = np.tile(sb[constrained, 1], H_)
        self.soft_weight = cfg.soft_weight_factor * max(float(np.max(cfg.Q)), 1.0) if self.rows.size else None

    def qp(self, z0, ref_window) -> QpProblem:
        """QP in the stacked inputs for lifted state ``z0``."""
        cfg = self.cfg
        ref_window = np.asarray(ref_window, dtype=float).reshape(cfg.horizon + 1, self.n)
        free = self.Gamma @ z0
        c = free - ref_window[1:].ravel()
        e0 = self.p.C @ z0 - ref_window[0]
        const = float(c @ self.Qbar @ c + e0 @ cfg.Q @ e0)
        f = 2.0 * self._QT.T @ c
        A = self.Theta[self.rows] if self.rows.size else None
        return QpProblem(
            H=self.H,
            f=f,
            lb=self.lb,
            ub=self.ub,
            A=A,
            lA=self.row_lo - free[self.rows] if self.rows.size else None,
            uA=self.row_hi - free[self.rows] if self.rows.size else None,
            soft_weight=self.soft_weight,
            const=const,
        )

    def solve(self, z0, t: int = 0) -> QpSolution:
        return solve_qp(self.qp(z0, self.cfg.reference_window(t)))

    def predicted_cost(self, z0, u_stack, t: int = 0) -> float:
        """Explicit cost of an input sequence under the linear model."""
        cfg = self.cfg
        U = np.asarray(u_stack, dtype=float).reshape(cfg.horizon, self.m)
        refs = cfg.reference_window(t)
        z = np.asarray(z0, dtype=float)
        total = 0.0
        for k in range(cfg.horizon + 1):
            e = self.p.C @ z - refs[k]
            total += e @ cfg.Q @ e
            if k < cfg.horizon:
                total += U[k] @ cfg.R @ U[k]
                z = self.p.A @ z + self.p.B @ U[k]
        return float(total)


def condense(p: LinearPredictor, cfg: MpcConfig, z0, t: int = 0) -> QpProblem:
    """Condensed QP for lifted state ``z0`` at time step ``t``."""
    return LinearMpc(p, cfg).qp(z0, cfg.reference_window(t))


def tracking_cost(X, U, ref, Q, R) -> np.ndarray:
    """Stage costs ``(x_t - r_t)'Q(x_t - r_t) + u_t'R u_t`` for ``t < T``."""
    X, U, ref = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (X, U, ref))
    T = U.shape[1]
    E = X[:, :T] - ref[:, :T]
    return np.einsum("it,ij,jt->t", E, Q, E) + np.einsum("it,ij,jt->t", U, R, U)


@dataclass
class ClosedLoopResult:
    X: np.ndarray
    U: np.ndarray
    ref: np.ndarray
    stage_cost: np.ndarray
    J: float
    dt: float
    max_kkt: float = 0.0
    soft_violation_steps: int = 0
    max_violation: float = 0.0
    predicted_costs: list = field(default_factory=list)

    @property
    def t(self):
        return self.dt * np.arange(self.X.shape[1])

    def to_csv(self, path) -> None:
        n, m = self.X.shape[0], self.U.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
                       + [f"ref{i}" for i in range(n)] + ["stage_cost"])
            T = self.U.shape[1]
            for k in range(T):
                w.writerow([repr(float(self.dt * k))] + [repr(float(v)) for v in self.X[:, k]]
                           + [repr(float(v)) for v in self.U[:, k]]
                           + [repr(float(v)) for v in self.ref[:, k]] + [repr(float(self.stage_cost[k]))])


def run_closed_loop(
    plant: PlantModel,
    p: LinearPredictor,
    cfg: MpcConfig,
    x0,
    duration: float,
    measurement_quantizers=None,
    stream: Optional[DitherStream] = None,
    controller: Optional[LinearMpc] = None,
) -> ClosedLoopResult:
    """Receding-horizon control of ``plant`` for ``duration`` seconds.

    Pass ``measurement_quantizers`` (and a ``stream``) to dither-quantize the
    state measurements fed to the controller; by default they are exact.
    """
    ctrl = controller or LinearMpc(p, cfg)
    steps = max(1, int(round(duration / plant.dt)))
    X = np.empty((plant.n, steps + 1))
    U = np.empty((plant.m, steps))
    X[:, 0] = x0
    lo, hi = cfg.input_bounds[:, 0], cfg.input_bounds[:, 1]
    max_kkt = 0.0
    viol_steps = 0
    max_viol = 0.0
    predicted = []
    for t in range(steps):
        meas = X[:, t]
        if measurement_quantizers is not None:
            meas = dither_quantize_vector(measurement_quantizers, meas, stream)
        sol = ctrl.solve(lift(p.dictionary, meas), t)
        u = np.clip(sol.x[: plant.m], lo, hi)
        max_kkt = max(max_kkt, sol.kkt_residual)
        if sol.violation > 1e-8:
            viol_steps += 1
            max_viol = max(max_viol, sol.violation)
        predicted.append(sol.objective)
        U[:, t] = u
        try:
            X[:, t + 1] = plant.step(X[:, t], u)
        except DivergenceError as exc:
            raise DivergenceError(f"closed loop diverged at step {t}: {exc}", step=t) from None
        if np.max(np.abs(X[:, t + 1])) > 1e6:
            raise DivergenceError(f"closed loop diverged at step {t}", step=t)
    ref = np.stack([cfg.reference_at(t) for t in range(steps + 1)], axis=1)
    stage = tracking_cost(X, U, ref, cfg.Q, cfg.R)
    return ClosedLoopResult(
        X=X,
        U=U,
        ref=ref,
        stage_cost=stage,
        J=float(np.sum(stage)),
        dt=plant.dt,
        max_kkt=max_kkt,
        soft_violation_steps=viol_steps,
        max_violation=max_viol,
        predicted_costs=predicted,
    )
