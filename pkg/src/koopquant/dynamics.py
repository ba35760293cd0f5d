"""Ground-truth plants and trajectory generation.

ODE plants are advanced with classical RK4 under a zero-order hold on the
input.  The KdV plant uses a Fourier pseudo-spectral discretization on
``[-pi, pi)`` with an implicit-explicit Runge-Kutta stepper (ARS(4,4,3)):
the dispersive ``y_xxx`` term is treated implicitly (a diagonal solve in
Fourier space), advection and forcing explicitly.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, DivergenceError

__all__ = [
    "PlantModel",
    "TrajectorySet",
    "pendulum",
    "van_der_pol",
    "motor",
    "kdv",
    "make_plant",
    "linear_plant",
    "PLANTS",
    "rk4_step",
    "simulate",
    "simulate_batch",
    "KdvSolver",
    "kdv_step",
    "kdv_grid",
    "kdv_forcing_profiles",
    "kdv_initial_profiles",
    "generate_training_set",
    "trajectory_rng",
]

DIVERGENCE_NORM = 1e6


@dataclass
class PlantModel:
    """A sampled-data plant ``x_{t+1} = step(x_t, u_t)``.

    ``input_bounds`` and ``state_bounds`` are the physical constraints used by
    MPC; ``train_input_range`` is the interval training inputs are drawn from.
    Bounds are ``(dim, 2)`` arrays with ``-inf``/``inf`` for unconstrained
    coordinates.
    """

    name: str
    n: int
    m: int
    dt: float
    params: dict
    input_bounds: np.ndarray
    state_bounds: Optional[np.ndarray] = None
    train_input_range: tuple = (-1.0, 1.0)
    vector_field: Optional[Callable] = None
    mpc_defaults: dict = field(default_factory=dict)
    stepper: Optional[Callable] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n < 1 or self.m < 1:
            raise ValueError("state and input dimensions must be at least 1")
        self.input_bounds = np.asarray(self.input_bounds, dtype=float).reshape(self.m, 2)
        if self.state_bounds is None:
            self.state_bounds = np.tile([-np.inf, np.inf], (self.n, 1))
        self.state_bounds = np.asarray(self.state_bounds, dtype=float).reshape(self.n, 2)

    def step(self, x, u):
        """Advance one sampling period; ``x`` is ``(n,)`` or ``(n, batch)``."""
        if self.stepper is not None:
            return self.stepper(np.asarray(x, dtype=float), np.asarray(u, dtype=float))
        if self.name == "kdv":
            return kdv_step(x, u, self.dt, mesh=self.n)
        return rk4_step(self.vector_field, x, u, self.dt)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "m": self.m,
            "dt": self.dt,
            "params": dict(self.params),
            "train_input_range": list(self.train_input_range),
        }


def _pendulum_field(x, u):
    return np.stack([x[1], 0.01 * x[1] - np.sin(x[0]) + u[0]])


def _vdp_field(x, u):
    return np.stack([2.0 * x[1], -0.8 * x[0] + 2.0 * x[1] - 10.0 * x[0] ** 2 * x[1] + u[0]])


def pendulum(dt: float = 0.01) -> PlantModel:
    """Pendulum with a small destabilizing velocity term."""
    return PlantModel(
        name="pendulum",
        n=2,
        m=1,
        dt=dt,
        params={},
        input_bounds=[[-4.0, 4.0]],
        state_bounds=[[-0.6, 0.6], [-np.inf, np.inf]],
        vector_field=_pendulum_field,
        mpc_defaults={"Q": [1.0, 0.0], "R": 0.01, "horizon": 100},
    )


def van_der_pol(dt: float = 0.01) -> PlantModel:
    """Forced Van der Pol oscillator."""
    return PlantModel(
        name="vdp",
        n=2,
        m=1,
        dt=dt,
        params={},
        input_bounds=[[-4.0, 4.0]],
        state_bounds=[[-1.0, 1.0], [-np.inf, np.inf]],
        vector_field=_vdp_field,
        mpc_defaults={"Q": [1.0, 0.0], "R": 0.01, "horizon": 100},
    )


MOTOR_PARAMS = {"La": 0.314, "Ra": 12.345, "km": 0.253, "J": 0.00441, "B": 0.00732, "tau_l": 1.47, "ua": 60.0}


def motor(dt: float = 0.01, train_input_range=(-1.0, 1.0), **overrides) -> PlantModel:
    """Bilinear field-controlled DC motor (armature current, shaft speed)."""
    p = dict(MOTOR_PARAMS)
    unknown = set(overrides) - set(p)
    if unknown:
        raise ValueError(f"unknown motor parameters {sorted(unknown)}")
    p.update(overrides)
    La, Ra, km, J, B, tl, ua = (p[k] for k in ("La", "Ra", "km", "J", "B", "tau_l", "ua"))

    def field(x, u):
        return np.stack([
            -(Ra / La) * x[0] - (km / La) * x[1] * u[0] + ua / La,
            -(B / J) * x[1] + (km / J) * x[0] * u[0] - tl / J,
        ])

    return PlantModel(
        name="motor",
        n=2,
        m=1,
        dt=dt,
        params=p,
        input_bounds=[[-2.0, 2.0]],
        state_bounds=[[-np.inf, np.inf], [-1.0, 1.0]],
        train_input_range=tuple(train_input_range),
        vector_field=field,
        mpc_defaults={"Q": [0.0, 1.0], "R": 0.01, "horizon": 100},
    )


def kdv(dt: float = 0.01, mesh: int = 128) -> PlantModel:
    """Forced KdV equation on a periodic mesh, three Gaussian actuators."""
    return PlantModel(
        name="kdv",
        n=mesh,
        m=3,
        dt=dt,
        params={"mesh": mesh, "domain": [-np.pi, np.pi], "integrator": "fourier pseudo-spectral, IMEX ARS(4,4,3)"},
        input_bounds=[[-1.0, 1.0]] * 3,
        mpc_defaults={"Q": 1.0, "R": 0.0, "horizon": 10},
    )


def linear_plant(A, B, dt: float = 1.0, input_bounds=None, state_bounds=None, **kwargs) -> PlantModel:
    """Discrete-time linear plant ``x+ = A x + B u``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    if input_bounds is None:
        input_bounds = [[-np.inf, np.inf]] * m

    def stepper(x, u):
        return A @ x + B @ u

    return PlantModel(
        name="linear",
        n=n,
        m=m,
        dt=dt,
        params={"A": A.tolist(), "B": B.tolist()},
        input_bounds=input_bounds,
        state_bounds=state_bounds,
        stepper=stepper,
        **kwargs,
    )


PLANTS = {"pendulum": pendulum, "vdp": van_der_pol, "motor": motor, "kdv": kdv}


def make_plant(name: str, **kwargs) -> PlantModel:
    try:
        return PLANTS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown plant {name!r}; choose from {sorted(PLANTS)}") from None


def rk4_step(f, x, u, dt):
    """One classical Runge-Kutta step with ``u`` held constant over the step."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite state in RK4 step")
    return out


def simulate_batch(plant: PlantModel, X0, U) -> np.ndarray:
    """Simulate many trajectories at once.

    Parameters
    ----------
    X0 : (n, batch) array_like
    U : (m, T, batch) array_like

    Returns
    -------
    (n, T + 1, batch) ndarray
    """
    X0 = np.asarray(X0, dtype=float)
    U = np.asarray(U, dtype=float)
    if X0.shape[0] != plant.n or U.shape[0] != plant.m:
        raise DimensionError("initial state / input dimension does not match the plant")
    T = U.shape[1]
    X = np.empty((plant.n, T + 1) + X0.shape[1:])
    X[:, 0] = X0
    for t in range(T):
        try:
            X[:, t + 1] = plant.step(X[:, t], U[:, t])
        except DivergenceError as exc:
            raise DivergenceError(f"{plant.name}: {exc}", step=t) from None
        if np.max(np.abs(X[:, t + 1])) > DIVERGENCE_NORM:
            raise DivergenceError(f"{plant.name}: state norm exceeded {DIVERGENCE_NORM:g} at step {t}", step=t)
    return X


def simulate(plant: PlantModel, x0, U) -> np.ndarray:
    """Simulate one trajectory; returns ``X`` of shape ``(n, T + 1)``."""
    x0 = np.asarray(x0, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[1] < 1:
        raise ValueError("need at least one input sample")
    return simulate_batch(plant, x0[:, None], U[:, :, None])[:, :, 0]


# --------------------------------------------------------------------------
# KdV

def kdv_grid(mesh: int = 128) -> np.ndarray:
    return -np.pi + 2.0 * np.pi * np.arange(mesh) / mesh


def kdv_forcing_profiles(mesh: int = 128) -> np.ndarray:
    """Actuator shapes ``exp(-25 (x - c_i)^2)``, ``c = (-pi/2, 0, pi/2)``; shape ``(mesh, 3)``."""
    x = kdv_grid(mesh)
    centers = np.array([-np.pi / 2, 0.0, np.pi / 2])
    return np.exp(-25.0 * (x[:, None] - centers[None, :]) ** 2)


def _periodic_gaussian(x, c, images: int = 3):
    # sum of 2*pi shifted copies: smooth across the periodic seam
    shifts = 2.0 * np.pi * np.arange(-images, images + 1)
    return np.exp(-(x[:, None] - c + shifts[None, :]) ** 2).sum(axis=1)


def kdv_initial_profiles(mesh: int = 128) -> np.ndarray:
    """The three initial-condition profiles as columns, shape ``(mesh, 3)``.

    The Gaussians ``exp(-(x -+ pi/2)^2)`` are periodized (summed over their
    ``2 pi`` images); restricted to ``[-pi, pi)`` they would jump by 0.085 at
    the seam, which a spectral discretization sees as a discontinuity.
    """
    x = kdv_grid(mesh)
    return np.stack([
        _periodic_gaussian(x, np.pi / 2),
        -np.sin(x / 2) ** 2,
        _periodic_gaussian(x, -np.pi / 2),
    ], axis=1)


# ARS(4,4,3) tableaux (Ascher, Ruuth & Spiteri 1997)
_ARS_IMPLICIT = np.array([
    [0, 0, 0, 0, 0],
    [0, 1 / 2, 0, 0, 0],
    [0, 1 / 6, 1 / 2, 0, 0],
    [0, -1 / 2, 1 / 2, 1 / 2, 0],
    [0, 3 / 2, -3 / 2, 1 / 2, 1 / 2],
])
_ARS_EXPLICIT = np.array([
    [0, 0, 0, 0, 0],
    [1 / 2, 0, 0, 0, 0],
    [11 / 18, 1 / 18, 0, 0, 0],
    [5 / 6, -5 / 6, 1 / 2, 0, 0],
    [1 / 4, 7 / 4, 3 / 4, -7 / 4, 0],
])


class KdvSolver:
    """Pseudo-spectral IMEX stepper for ``y_t + y y_x + y_xxx = sum_i u_i v_i(x)``.

    The quadratic term is dealiased with the 2/3 rule.  Its zero Fourier mode
    vanishes identically, so without forcing the spatial mean is conserved to
    round-off.
    """

    def __init__(self, mesh: int = 128, dt: float = 0.01):
        self.mesh = int(mesh)
        self.dt = float(dt)
        # integer wavenumbers on a 2*pi periodic domain
        self.k = np.fft.rfftfreq(self.mesh, d=1.0 / self.mesh)
        self.ik = 1j * self.k
        self.linear = -(self.ik ** 3)
        self.dealias = self.k < (2.0 / 3.0) * (self.mesh // 2)
        self.profiles_hat = np.fft.rfft(kdv_forcing_profiles(self.mesh), axis=0)
        self._solve = [1.0 / (1.0 - self.dt * a * self.linear) for a in np.diag(_ARS_IMPLICIT)]

    def _explicit(self, yh, fh):
        y = np.fft.irfft(yh, n=self.mesh, axis=0)
        nl = np.fft.rfft(0.5 * y * y, axis=0)
        k = self.ik.reshape((-1,) + (1,) * (yh.ndim - 1))
        mask = self.dealias.reshape(k.shape)
        return -k * nl * mask + fh

    def step(self, y, u):
        y = np.asarray(y, dtype=float)
        u = np.asarray(u, dtype=float)
        shape = (-1,) + (1,) * (y.ndim - 1)
        lin = self.linear.reshape(shape)
        yh = np.fft.rfft(y, axis=0)
        fh = np.tensordot(self.profiles_hat, u, axes=(1, 0))
        stages = len(_ARS_IMPLICIT)
        E = [None] * stages
        L = [None] * stages
        for i in range(stages):
            rhs = yh.copy()
            for j in range(i):
                if _ARS_EXPLICIT[i, j]:
                    rhs = rhs + self.dt * _ARS_EXPLICIT[i, j] * E[j]
                if _ARS_IMPLICIT[i, j]:
                    rhs = rhs + self.dt * _ARS_IMPLICIT[i, j] * L[j]
            Yi = rhs * self._solve[i].reshape(shape)
            L[i] = lin * Yi
            E[i] = self._explicit(Yi, fh)
        # stiffly accurate: the last stage is the new state
        out = np.fft.irfft(Yi, n=self.mesh, axis=0)
        if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > DIVERGENCE_NORM:
            raise DivergenceError("KdV stepper became unstable")
        return out


@lru_cache(maxsize=8)
def _kdv_solver(mesh, dt):
    return KdvSolver(mesh, dt)


def kdv_step(state, u_coeffs, dt: float = 0.01, mesh: Optional[int] = None):
    """Advance the KdV state(s) by ``dt`` under actuator coefficients ``u_coeffs``."""
    state = np.asarray(state, dtype=float)
    mesh = state.shape[0] if mesh is None else mesh
    if state.shape[0] != mesh:
        raise DimensionError(f"state has {state.shape[0]} points, mesh is {mesh}")
    return _kdv_solver(int(mesh), float(dt)).step(state, u_coeffs)


# --------------------------------------------------------------------------
# training data

@dataclass
class TrajectorySet:
    """Simulated trajectories of equal length.

    ``X`` has shape ``(n_traj, n, T + 1)`` and ``U`` shape ``(n_traj, m, T)``.
    """

    X: np.ndarray
    U: np.ndarray
    dt: float
    seed: Optional[int] = None
    plant: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.U = np.asarray(self.U, dtype=float)
        if self.X.ndim != 3 or self.U.ndim != 3 or self.X.shape[0] != self.U.shape[0]:
            raise DimensionError("X must be (n_traj, n, T+1) and U (n_traj, m, T)")
        if self.X.shape[2] != self.U.shape[2] + 1:
            raise DimensionError("each trajectory needs exactly one more state than inputs")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.U))):
            raise ValueError("trajectory data contain non-finite values")

    @property
    def n_traj(self):
        return self.X.shape[0]

    @property
    def horizon(self):
        return self.U.shape[2]

    @property
    def trajectories(self):
        return [(self.X[i], self.U[i]) for i in range(self.n_traj)]

    def subset(self, idx) -> "TrajectorySet":
        return TrajectorySet(self.X[idx], self.U[idx], self.dt, self.seed, self.plant, dict(self.meta))

    def save_npz(self, path) -> None:
        header = {"plant": self.plant, "dt": self.dt, "seed": self.seed, "meta": self.meta, "version": 1}
        np.savez(path, X=self.X, U=self.U, header=np.array(json.dumps(header)))

    @classmethod
    def load_npz(cls, path) -> "TrajectorySet":
        with np.load(path) as f:
            header = json.loads(str(f["header"]))
            return cls(f["X"], f["U"], header["dt"], header["seed"], header["plant"], header.get("meta", {}))

    def to_csv(self, directory) -> list:
        """Write one CSV per trajectory with a commented header line."""
        os.makedirs(directory, exist_ok=True)
        paths = []
        n, m = self.X.shape[1], self.U.shape[1]
        for i, (X, U) in enumerate(self.trajectories):
            path = os.path.join(directory, f"traj_{i:04d}.csv")
            with open(path, "w", newline="") as fh:
                fh.write(f"# plant={self.plant} dt={self.dt!r} seed={self.seed} trajectory={i}\n")
                w = csv.writer(fh)
                w.writerow(["t"] + [f"x{j}" for j in range(n)] + [f"u{j}" for j in range(m)])
                for t in range(X.shape[1]):
                    u = U[:, t] if t < U.shape[1] else [""] * m
                    w.writerow([t] + [repr(float(v)) for v in X[:, t]] + [v if v == "" else repr(float(v)) for v in u])
            paths.append(path)
        return paths


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trajectory ``index`` under master ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def _sample_initial_state(plant: PlantModel, rng):
    if plant.name == "kdv":
        weights = rng.dirichlet(np.ones(3))
        return kdv_initial_profiles(plant.n) @ weights, weights
    return rng.uniform(-1.0, 1.0, size=plant.n), None


def generate_training_set(plant: PlantModel, n_traj: int, T: int, seed: int) -> TrajectorySet:
    """Random-input trajectories from random initial conditions.

    ODE plants start uniformly in ``[-1, 1]^n``; KdV starts from a random
    convex combination (uniform on the simplex) of its three profiles.
    Inputs are i.i.d. uniform on ``plant.train_input_range`` at every step.
    """
    if n_traj < 1 or T < 1:
        raise ValueError("n_traj and T must be at least 1")
    lo, hi = plant.train_input_range
    X0 = np.empty((plant.n, n_traj))
    U = np.empty((plant.m, T, n_traj))
    weights = []
    for i in range(n_traj):
        rng = trajectory_rng(seed, i)
        X0[:, i], wts = _sample_initial_state(plant, rng)
        U[:, :, i] = rng.uniform(lo, hi, size=(plant.m, T))
        if wts is not None:
            weights.append(wts.tolist())
    X = simulate_batch(plant, X0, U)
    meta = {"ic_weights": weights} if weights else {}
    return TrajectorySet(
        X=np.moveaxis(X, 2, 0),
        U=np.moveaxis(U, 2, 0),
        dt=plant.dt,
        seed=seed,
        plant=plant.name,
        meta=meta,
    )
