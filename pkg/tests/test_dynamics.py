import numpy as np
import pytest

from koopquant.dynamics import (
    MOTOR_PARAMS,
    KdvSolver,
    TrajectorySet,
    generate_training_set,
    kdv,
    kdv_forcing_profiles,
    kdv_grid,
    kdv_initial_profiles,
    kdv_step,
    linear_plant,
    make_plant,
    motor,
    pendulum,
    rk4_step,
    simulate,
    van_der_pol,
)
from koopquant.errors import DimensionError, DivergenceError


def decay(x, u):
    return -x


def test_rk4_zero_field():
    x = np.array([1.0, -2.0])
    np.testing.assert_array_equal(rk4_step(lambda x, u: 0 * x, x, np.zeros(1), 0.1), x)


def test_rk4_one_step_against_exponential():
    x1 = rk4_step(decay, np.array([1.0]), np.zeros(1), 0.01)[0]
    assert abs(x1 - np.exp(-0.01)) < 1e-11  # local error O(dt^5)
    assert x1 == pytest.approx(0.990049834, abs=1e-9)


def test_rk4_observed_order():
    errs = []
    for dt in (0.1, 0.05, 0.025):
        x = np.array([1.0])
        for _ in range(int(round(1.0 / dt))):
            x = rk4_step(decay, x, np.zeros(1), dt)
        errs.append(abs(x[0] - np.exp(-1.0)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.8)


def test_rk4_non_finite_raises():
    with pytest.raises(DivergenceError):
        rk4_step(lambda x, u: x * np.inf, np.array([1.0]), np.zeros(1), 0.1)


def test_pendulum_equilibrium_held():
    X = simulate(pendulum(), np.zeros(2), np.zeros((1, 100)))
    assert np.all(X == 0.0)


def test_pendulum_energy_grows():
    X = simulate(pendulum(), np.array([0.1, 0.0]), np.zeros((1, 1000)))
    energy = 0.5 * X[1] ** 2 + 1 - np.cos(X[0])
    assert energy[-1] > energy[0]


def test_pendulum_origin_is_unstable():
    p = pendulum()
    h = 1e-6
    J = np.column_stack([(p.vector_field(e * h, np.zeros(1)) - p.vector_field(-e * h, np.zeros(1))) / (2 * h)
                         for e in np.eye(2)])
    assert np.max(np.linalg.eigvals(J).real) > 0


def test_vdp_field_hand_value():
    f = van_der_pol().vector_field(np.array([1.0, 0.5]), np.array([0.2]))
    np.testing.assert_allclose(f, [1.0, -0.8 + 1.0 - 5.0 + 0.2])


def test_motor_converges_to_linear_steady_state():
    p = MOTOR_PARAMS
    # with u = 0 the two states decouple
    x_ss = np.array([p["ua"] / p["Ra"], -p["tau_l"] / p["B"]])
    X = simulate(motor(), np.zeros(2), np.zeros((1, 1000)))
    np.testing.assert_allclose(X[:, -1], x_ss, rtol=1e-6)


def test_motor_parameter_override_and_unknown():
    assert motor(Ra=1.0).params["Ra"] == 1.0
    with pytest.raises(ValueError):
        motor(bogus=1.0)
    with pytest.raises(ValueError):
        make_plant("cartpole")


def test_simulate_divergence_reports_step():
    plant = linear_plant([[10.0]], [[0.0]])
    with pytest.raises(DivergenceError) as info:
        simulate(plant, np.ones(1), np.zeros((1, 20)))
    assert info.value.step == 6  # x_7 = 10^7 is the first state above 10^6


def test_simulate_dimension_checks():
    with pytest.raises(DimensionError):
        simulate(pendulum(), np.zeros(3), np.zeros((1, 5)))


def test_kdv_zero_stays_zero():
    y = kdv_step(np.zeros(128), np.zeros(3))
    assert np.all(y == 0.0)


def test_kdv_unforced_mass_conserved():
    y = kdv_initial_profiles(128) @ np.array([0.2, 0.5, 0.3])
    m0 = y.sum()
    for _ in range(1000):
        y1 = kdv_step(y, np.zeros(3))
        assert abs(y1.mean() - y.mean()) <= 1e-8
        y = y1
    assert abs(y.sum() - m0) * (2 * np.pi / 128) < 1e-8
    assert np.max(np.abs(y)) < 10


def test_kdv_constant_forcing_mass_growth():
    dt, dx = 0.01, 2 * np.pi / 128
    growth = dt * kdv_forcing_profiles(128)[:, 0].sum() * dx
    y = kdv_initial_profiles(128)[:, 1].copy()
    mass = [y.sum() * dx]
    for _ in range(100):
        y = kdv_step(y, np.array([1.0, 0.0, 0.0]), dt)
        mass.append(y.sum() * dx)
    np.testing.assert_allclose(np.diff(mass), growth, rtol=1e-9)


def test_kdv_linear_dispersion_mode():
    # a small single Fourier mode evolves like exp(i k^3 t) under y_t + y_xxx = 0
    x = kdv_grid(32)
    amp, k, dt, steps = 1e-8, 3, 0.001, 100
    y = amp * np.cos(k * x)
    s = KdvSolver(32, dt)
    for _ in range(steps):
        y = s.step(y, np.zeros(3))
    exact = amp * np.cos(k * x + k ** 3 * dt * steps)
    np.testing.assert_allclose(y, exact, atol=1e-4 * amp)


def test_kdv_dt_refinement_third_order():
    y0 = kdv_initial_profiles(128) @ np.array([0.3, 0.3, 0.4])
    finals = []
    for dt in (0.004, 0.002, 0.001, 0.0005):
        s = KdvSolver(128, dt)
        y = y0.copy()
        for _ in range(int(round(0.2 / dt))):
            y = s.step(y, np.zeros(3))
        finals.append(y)
    d = [np.linalg.norm(a - b) for a, b in zip(finals[:-1], finals[1:])]
    assert d[0] / d[1] > 6 and d[1] / d[2] > 6


def test_kdv_initial_profiles_periodic_and_smooth():
    P = kdv_initial_profiles(128)
    spec = np.abs(np.fft.rfft(P, axis=0))
    assert np.all(spec[40:] < 1e-12)
    x = kdv_grid(128)
    # away from the seam the periodized Gaussian is the plain one
    mid = np.abs(x - np.pi / 2) < 1.0
    np.testing.assert_allclose(P[mid, 0], np.exp(-(x[mid] - np.pi / 2) ** 2), atol=1e-4)


def test_training_set_shapes_and_bounds():
    data = generate_training_set(pendulum(), 3, 50, seed=1)
    assert data.X.shape == (3, 2, 51) and data.U.shape == (3, 1, 50)
    assert np.all(np.abs(data.U) <= 1) and np.all(np.abs(data.X[:, :, 0]) <= 1)


def test_training_set_deterministic():
    a = generate_training_set(van_der_pol(), 2, 20, seed=7)
    b = generate_training_set(van_der_pol(), 2, 20, seed=7)
    np.testing.assert_array_equal(a.X, b.X)
    c = generate_training_set(van_der_pol(), 2, 20, seed=8)
    assert not np.array_equal(a.X, c.X)


def test_kdv_initial_conditions_are_convex_combinations():
    data = generate_training_set(kdv(), 4, 2, seed=3)
    P = kdv_initial_profiles(128)
    for i, w in enumerate(data.meta["ic_weights"]):
        assert min(w) >= 0 and sum(w) == pytest.approx(1.0, abs=1e-12)
        coef, *_ = np.linalg.lstsq(P, data.X[i, :, 0], rcond=None)
        assert np.max(np.abs(P @ coef - data.X[i, :, 0])) <= 1e-12
        np.testing.assert_allclose(coef, w, atol=1e-10)
    assert np.all(np.abs(data.U) <= 1)


def test_trajectory_set_validation():
    with pytest.raises(DimensionError):
        TrajectorySet(np.zeros((1, 2, 5)), np.zeros((1, 1, 5)), 0.01)
    with pytest.raises(ValueError):
        TrajectorySet(np.full((1, 2, 3), np.nan), np.zeros((1, 1, 2)), 0.01)


def test_trajectory_set_persistence(tmp_path):
    data = generate_training_set(pendulum(), 2, 10, seed=4)
    data.save_npz(tmp_path / "d.npz")
    back = TrajectorySet.load_npz(tmp_path / "d.npz")
    np.testing.assert_array_equal(back.X, data.X)
    assert back.seed == 4 and back.plant == "pendulum"
    paths = data.to_csv(tmp_path / "csv")
    text = open(paths[0]).read().splitlines()
    assert text[0].startswith("# plant=pendulum")
    row = text[2].split(",")
    assert float(row[1]) == data.X[0, 0, 0]


def test_invalid_plant_fields():
    with pytest.raises(ValueError):
        linear_plant([[1.0]], [[1.0]], dt=0.0)
