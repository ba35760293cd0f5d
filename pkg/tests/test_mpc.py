import numpy as np
import pytest

from koopquant.dictionary import make_custom_dictionary
from koopquant.dynamics import linear_plant, pendulum
from koopquant.errors import DimensionError
from koopquant.ident import LinearPredictor
from koopquant.mpc import LinearMpc, MpcConfig, condense, run_closed_loop, step_reference, tracking_cost


def identity_predictor(A, B):
    A = np.atleast_2d(A)
    n = A.shape[0]
    d = make_custom_dictionary(n, [lambda X, i=i: X[i] for i in range(n)], state_block=True)
    return LinearPredictor(A, np.asarray(B, float).reshape(n, -1), np.eye(n), d)


def test_scalar_one_step_hand_solution():
    # cost z0^2 + (z0 + u)^2 with z0 = 1 is minimized by u = -1
    p = identity_predictor([[1.0]], [[1.0]])
    cfg = MpcConfig(Q=1.0, R=0.0, horizon=1, input_bounds=[[-10.0, 10.0]])
    sol = LinearMpc(p, cfg).solve(np.array([1.0]))
    assert sol.x[0] == pytest.approx(-1.0, abs=1e-8)
    assert sol.objective == pytest.approx(1.0, abs=1e-8)


def test_condensed_cost_matches_explicit_cost():
    rng = np.random.default_rng(0)
    A = np.array([[0.9, 0.2], [-0.1, 0.95]])
    p = identity_predictor(A, [[0.0], [0.5]])
    cfg = MpcConfig(Q=[1.0, 0.3], R=0.1, horizon=6, input_bounds=[[-1.0, 1.0]],
                    reference=step_reference([0.5, -0.5], 3, 2, total=20))
    ctrl = LinearMpc(p, cfg)
    z0 = rng.normal(size=2)
    qp = ctrl.qp(z0, cfg.reference_window(2))
    for _ in range(5):
        u = rng.normal(size=6)
        assert qp.objective(u) == pytest.approx(ctrl.predicted_cost(z0, u, 2), rel=1e-12)


def test_hessian_matches_finite_differences():
    rng = np.random.default_rng(1)
    p = identity_predictor(np.array([[1.0, 0.1], [0.0, 0.9]]), [[0.0], [1.0]])
    cfg = MpcConfig(Q=np.diag([1.0, 0.5]), R=0.2, horizon=5, input_bounds=[[-4.0, 4.0]])
    ctrl = LinearMpc(p, cfg)
    z0 = rng.normal(size=2)
    h = 1e-3
    u = rng.normal(size=5)
    E = np.eye(5)
    fd = np.array([[(ctrl.predicted_cost(z0, u + h * E[i] + h * E[j]) - ctrl.predicted_cost(z0, u + h * E[i] - h * E[j])
                     - ctrl.predicted_cost(z0, u - h * E[i] + h * E[j]) + ctrl.predicted_cost(z0, u - h * E[i] - h * E[j]))
                    / (4 * h * h) for j in range(5)] for i in range(5)])
    np.testing.assert_allclose(condense(p, cfg, z0).H, fd, atol=1e-6)


def test_heavy_input_penalty_drives_input_to_zero():
    p = identity_predictor([[1.0]], [[1.0]])
    cfg = MpcConfig(Q=1.0, R=1e8, horizon=5, input_bounds=[[-1.0, 1.0]])
    assert np.max(np.abs(LinearMpc(p, cfg).solve(np.array([1.0])).x)) < 1e-6


def test_equilibrium_gives_zero_cost():
    plant = linear_plant([[1.1, 0.1], [0.0, 0.9]], [[0.0], [1.0]], input_bounds=[[-1.0, 1.0]])
    p = identity_predictor(plant.params["A"], plant.params["B"])
    cfg = MpcConfig(Q=np.eye(2), R=0.1, horizon=10, input_bounds=plant.input_bounds)
    res = run_closed_loop(plant, p, cfg, np.zeros(2), 20.0)
    assert res.J <= 1e-6 and np.max(np.abs(res.U)) <= 1e-6


def test_mpc_beats_zero_input():
    plant = linear_plant([[1.05]], [[0.1]], input_bounds=[[-2.0, 2.0]])
    p = identity_predictor([[1.05]], [[0.1]])
    cfg = MpcConfig(Q=1.0, R=0.01, horizon=15, input_bounds=plant.input_bounds)
    res = run_closed_loop(plant, p, cfg, np.array([1.0]), 40.0)
    X0 = 1.05 ** np.arange(41)[None, :]
    J0 = tracking_cost(X0, np.zeros((1, 40)), np.zeros((1, 41)), cfg.Q, cfg.R).sum()
    assert res.J < J0
    assert np.all(np.abs(res.U) <= 2.0)


def test_soft_state_bound_respected_with_exact_model():
    plant = linear_plant([[1.0]], [[0.1]], input_bounds=[[-1.0, 1.0]], state_bounds=[[-0.5, 0.5]])
    p = identity_predictor([[1.0]], [[0.1]])
    cfg = MpcConfig(Q=1.0, R=0.01, horizon=10, input_bounds=plant.input_bounds, state_bounds=plant.state_bounds,
                    reference=np.array([[1.0]]))
    res = run_closed_loop(plant, p, cfg, np.zeros(1), 30.0)
    assert np.max(res.X) <= 0.5 + 1e-8
    assert res.X[0, -1] == pytest.approx(0.5, abs=1e-6)
    assert res.soft_violation_steps == 0


def test_for_plant_defaults():
    cfg = MpcConfig.for_plant(pendulum())
    np.testing.assert_array_equal(cfg.Q, np.diag([1.0, 0.0]))
    assert cfg.horizon == 100 and cfg.input_bounds.tolist() == [[-4.0, 4.0]]
    assert cfg.state_bounds[0].tolist() == [-0.6, 0.6]
    assert MpcConfig.for_plant(pendulum(), horizon=20).horizon == 20


def test_step_reference():
    ref = step_reference([0.5, -0.5], 2, 2, total=5)
    np.testing.assert_array_equal(ref[0], [0.5, 0.5, -0.5, -0.5, 0.5])
    np.testing.assert_array_equal(ref[1], 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(Q=[[1.0, 2.0], [0.0, 1.0]], R=1.0, horizon=3, input_bounds=[[-1, 1]])
    with pytest.raises(ValueError):
        MpcConfig(Q=-1.0, R=1.0, horizon=3, input_bounds=[[-1, 1]])
    with pytest.raises(ValueError):
        MpcConfig(Q=1.0, R=1.0, horizon=0, input_bounds=[[-1, 1]])
    with pytest.raises(ValueError):
        MpcConfig(Q=1.0, R=1.0, horizon=3, input_bounds=[[1, -1]])
    p = identity_predictor(np.eye(2), np.ones((2, 1)))
    with pytest.raises(DimensionError):
        LinearMpc(p, MpcConfig(Q=1.0, R=1.0, horizon=3, input_bounds=[[-1, 1]]))


def test_closed_loop_csv(tmp_path):
    plant = linear_plant([[0.5]], [[1.0]], input_bounds=[[-1.0, 1.0]])
    p = identity_predictor([[0.5]], [[1.0]])
    res = run_closed_loop(plant, p, MpcConfig(Q=1.0, R=1.0, horizon=3, input_bounds=[[-1.0, 1.0]]), np.ones(1), 5.0)
    res.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x0,u0,ref0,stage_cost" and len(lines) == 6
