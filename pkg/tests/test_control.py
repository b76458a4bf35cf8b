import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adoptnet import PreconditionError, SystemState, simulate
from adoptnet.control import (
    BudgetConstraint,
    CostWeights,
    MpcConfig,
    SolverOptions,
    constant_policy_objective,
    controlled_equilibrium,
    horizon_cost,
    horizon_gradient,
    project_budget_box,
    project_sequence,
    run_mpc,
    solve_constant_policy,
    solve_mpc_step,
    trajectory_cost,
)
from adoptnet.experiments import generate_scenario
from adoptnet.model import Trajectory, rollout
from adoptnet.stability import adoption_free_equilibrium

from .conftest import scalar_scenario
from .test_stability import DIFFUSED_GOLDEN

# Scalar scenario (beta 0.4, x0 0.5), C = 0.5, default weights: best u on the
# 1e-3 grid of [0, 0.5] with equilibria from long plain simulation.
CCP_SCALAR_GOLDEN_U = 0.5
CCP_SCALAR_GOLDEN_OBJ = 0.058057851240152274


def box(c, upper):
    return BudgetConstraint(c, np.asarray(upper, dtype=float))


def scalar_mpc_oracle(sc, state, weights, target, c, h=1e-4):
    """Exhaustive grid over u for N = 1, n = 1 using the hand-written step."""
    p = sc.params
    a, d, x = state.a[0], state.d[0], state.x[0]
    top = min(c, 1 - p.prejudice[0])
    us = np.arange(0, int(np.floor(top / h + 1e-9)) + 1) * h
    us = np.append(us[us <= top], top)
    s = 1 - a - d
    a1 = a + p.beta[0] * x * s * a - p.delta[0] * a
    d1 = d - p.gamma[0] * x * d + p.delta[0] * a + p.theta[0] * (1 - x) * s
    x1 = p.alpha[0] * (p.prejudice[0] + us) + p.lam[0] * x + p.xi[0] * a
    cost = (-weights.q_a[0] * a * a + weights.q_d[0] * d * d + weights.l[0] * us ** 2
            + weights.terminal_weight * ((a1 - target.a[0]) ** 2 + (d1 - target.d[0]) ** 2
                                         + (x1 - target.x[0]) ** 2))
    i = int(np.argmin(cost))
    return us[i], float(cost[i])


# ---------------------------------------------------------------------------
# projection


def test_projection_examples():
    np.testing.assert_allclose(project_budget_box([0.2, 0.3], box(1, [1, 1])), [0.2, 0.3])
    np.testing.assert_allclose(project_budget_box([0.8, 0.8], box(1, [1, 1])), [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(project_budget_box([1.5, -0.2], box(1, [1, 1])), [1.0, 0.0])


def test_projection_errors():
    with pytest.raises(PreconditionError):
        project_budget_box([0.1], BudgetConstraint(1.0))  # caps unresolved
    with pytest.raises(PreconditionError):
        project_budget_box([np.nan], box(1, [1]))
    with pytest.raises(PreconditionError):
        BudgetConstraint(-1.0)


@settings(max_examples=300, deadline=None)
@given(v=st.lists(st.floats(-2, 3), min_size=1, max_size=6),
       c=st.floats(0, 3), seed=st.integers(0, 1000))
def test_projection_kkt(v, c, seed):
    v = np.array(v)
    upper = np.random.default_rng(seed).uniform(0, 1, v.size)
    u = project_budget_box(v, box(c, upper))
    assert np.all(u >= 0) and np.all(u <= upper) and u.sum() <= c + 1e-12
    # optimality: u = clip(v - tau) with tau >= 0 and tau > 0 only if budget is tight
    free = (u > 1e-12) & (u < upper - 1e-12)
    if free.any():
        tau = v[free] - u[free]
        assert np.ptp(tau) <= 1e-9 and tau.min() >= -1e-9
        if tau.max() > 1e-9:
            assert u.sum() == pytest.approx(c, abs=1e-9)


def test_project_sequence_rows():
    U = np.array([[0.8, 0.8], [0.1, 0.1], [2.0, -1.0]])
    out = project_sequence(U, box(1, [1, 1]))
    np.testing.assert_allclose(out, [[0.5, 0.5], [0.1, 0.1], [1.0, 0.0]], atol=1e-12)


# ---------------------------------------------------------------------------
# costs


def test_trajectory_cost_hand_value():
    tr = Trajectory(np.array([[0.5], [0.5]]), np.array([[0.2], [0.2]]), np.array([[0.5], [0.5]]),
                    np.array([[0.1]]))
    assert trajectory_cost(tr, CostWeights.uniform(1)) == pytest.approx(-0.209, abs=1e-15)


def test_trajectory_cost_zero_and_linear():
    z = Trajectory(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((1, 2)))
    assert trajectory_cost(z, CostWeights.uniform(2)) == 0.0
    tr = simulate(generate_scenario(3, 3), 5)
    w1, w2 = CostWeights.uniform(3, q_a=1.0, q_d=0, l=0), CostWeights.uniform(3, q_a=2.0, q_d=0, l=0)
    assert trajectory_cost(tr, w2) == pytest.approx(2 * trajectory_cost(tr, w1), rel=1e-15)


def test_trajectory_cost_mismatch():
    from adoptnet import DimensionError
    tr = Trajectory(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((1, 1)))
    with pytest.raises(DimensionError):
        trajectory_cost(tr, CostWeights.uniform(1))


def test_weights_validation():
    with pytest.raises(PreconditionError):
        CostWeights(np.array([-1.0]), np.array([1.0]), np.array([0.1]))


# ---------------------------------------------------------------------------
# constant policy


def test_controlled_equilibrium_zero_control_matches_uncontrolled():
    sc = scalar_scenario(beta=0.8, prejudice=1.0)
    rep = controlled_equilibrium(sc, [0.0])
    np.testing.assert_allclose([rep.point.a[0], rep.point.d[0], rep.point.x[0]],
                               DIFFUSED_GOLDEN, atol=1e-8)
    sc2 = scalar_scenario(beta=0.1)
    ref = adoption_free_equilibrium(sc2).point
    got = controlled_equilibrium(sc2, [0.0]).point
    np.testing.assert_allclose(got.d, ref.d, atol=1e-8)
    np.testing.assert_allclose(got.x, ref.x, atol=1e-9)


def test_controlled_equilibrium_golden():
    # 10^6 plain-float steps with anchor 0.5 + 0.5; matches the x0 = 1 golden
    sc = scalar_scenario(beta=0.8, prejudice=0.5)
    rep = controlled_equilibrium(sc, [0.5], BudgetConstraint(1.0).resolve(sc))
    np.testing.assert_allclose([rep.point.a[0], rep.point.d[0], rep.point.x[0]],
                               (0.3205388041454076, 0.33615623658821403, 0.7282155216581631),
                               atol=1e-8)
    assert rep.residual <= 1e-10


def test_controlled_equilibrium_rejects_infeasible():
    from adoptnet import InfeasibleControlError
    sc = scalar_scenario()
    with pytest.raises(InfeasibleControlError):
        controlled_equilibrium(sc, [0.7])
    with pytest.raises(InfeasibleControlError):
        controlled_equilibrium(sc, [0.4], BudgetConstraint(0.3))


def test_constant_policy_zero_budget():
    sc = generate_scenario(8, 3)
    w = CostWeights.uniform(3)
    res = solve_constant_policy(sc, w, BudgetConstraint(0.0))
    assert np.all(res.u == 0)
    ref = controlled_equilibrium(sc, np.zeros(3))
    assert res.objective == pytest.approx(constant_policy_objective(ref, np.zeros(3), w), abs=1e-9)


def test_constant_policy_pure_effort_is_zero():
    sc = generate_scenario(9, 3)
    w = CostWeights.uniform(3, q_a=0.0, q_d=0.0, l=0.1)
    u, rep, obj = solve_constant_policy(sc, w, BudgetConstraint(1.0))
    assert np.all(u == 0) and obj == 0.0


def test_constant_policy_scalar_golden():
    sc = scalar_scenario()
    res = solve_constant_policy(sc, CostWeights.uniform(1), BudgetConstraint(0.5))
    assert res.u[0] == pytest.approx(CCP_SCALAR_GOLDEN_U, abs=1e-3)
    assert res.objective == pytest.approx(CCP_SCALAR_GOLDEN_OBJ, abs=1e-3)
    assert not res.certified and res.status == "infeasible constraint set"


def test_constant_policy_deterministic():
    sc = generate_scenario(12, 3)
    a = solve_constant_policy(sc, rng_seed=3, n_random=1)
    b = solve_constant_policy(sc, rng_seed=3, n_random=1)
    np.testing.assert_array_equal(a.u, b.u)
    assert a.objective == b.objective


def test_constant_policy_feasible():
    sc = generate_scenario(21, 5)
    budget = BudgetConstraint(0.7).resolve(sc)
    res = solve_constant_policy(sc, budget=budget)
    assert res.u.sum() <= 0.7 + 1e-12
    assert np.all(res.u >= 0) and np.all(res.u <= budget.upper)


# ---------------------------------------------------------------------------
# receding horizon


def test_gradient_matches_finite_differences(rng):
    sc = generate_scenario(31, 5)
    cfg = MpcConfig(horizon=10).resolve(sc)
    target = SystemState(rng.uniform(0, 0.3, 5), rng.uniform(0, 0.3, 5), rng.uniform(0.3, 0.9, 5))
    for _ in range(5):
        U = project_sequence(rng.uniform(0, 0.3, (10, 5)), cfg.budget)
        _, g = horizon_gradient(sc, sc.initial, U, cfg.weights, target)
        fd = np.empty_like(U)
        for idx in np.ndindex(*U.shape):
            e = np.zeros_like(U)
            e[idx] = 1e-6
            fd[idx] = (horizon_cost(sc, sc.initial, U + e, cfg.weights, target)
                       - horizon_cost(sc, sc.initial, U - e, cfg.weights, target)) / 2e-6
        assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd)


def test_mpc_zero_budget():
    sc = generate_scenario(5, 4)
    cfg = MpcConfig(horizon=6, budget=BudgetConstraint(0.0))
    res = solve_mpc_step(sc.initial, sc, cfg)
    assert np.all(res.controls == 0)
    np.testing.assert_array_equal(res.predicted.a, simulate(sc, 6).a)


def test_mpc_scalar_grid():
    rng = np.random.default_rng(7)
    for _ in range(10):
        sc = generate_scenario(int(rng.integers(0, 10**6)), 1)
        state = SystemState(rng.uniform(0, 0.5, 1), rng.uniform(0, 0.4, 1), rng.uniform(0, 1, 1))
        target = SystemState(rng.uniform(0, 1, 1), rng.uniform(0, 0.5, 1), rng.uniform(0, 1, 1))
        w = CostWeights(np.array([1.0]), np.array([0.0]), np.array([0.0]), 10.0)
        c = float(rng.uniform(0.05, 1))
        cfg = MpcConfig(horizon=1, weights=w, budget=BudgetConstraint(c), target=target)
        res = solve_mpc_step(state, sc, cfg)
        _, best = scalar_mpc_oracle(sc, state, w, target, c)
        assert res.cost <= best + 1e-3


def test_mpc_descent_is_monotone_and_feasible():
    sc = generate_scenario(42, 10)
    cfg = MpcConfig(horizon=10, budget=BudgetConstraint(1.0)).resolve(sc)
    res = solve_mpc_step(sc.initial, sc, cfg)
    assert np.all(np.diff(res.history) <= 0)
    assert np.all(res.controls >= 0) and np.all(res.controls <= cfg.budget.upper)
    assert np.all(res.controls.sum(axis=1) <= 1.0 + 1e-12)
    assert res.cost == pytest.approx(trajectory_cost(res.predicted, cfg.weights, cfg.target))


def test_mpc_gauss_newton_does_not_increase_cost():
    sc = generate_scenario(17, 4)
    target = SystemState(np.full(4, 0.1), np.full(4, 0.1), np.full(4, 0.7))
    base = MpcConfig(horizon=5, target=target, solver=SolverOptions(max_iter=20))
    gn = MpcConfig(horizon=5, target=target, solver=SolverOptions(max_iter=20, gauss_newton=True))
    a = solve_mpc_step(sc.initial, sc, base)
    b = solve_mpc_step(sc.initial, sc, gn)
    assert b.cost <= a.cost + 1e-12
    assert np.all(np.diff(b.history) <= 0)


def test_mpc_stall_is_flagged_not_raised():
    sc = generate_scenario(3, 3)
    cfg = MpcConfig(horizon=3, solver=SolverOptions(min_step=0.9, shrink=0.5, grad_tol=1e-14))
    res = solve_mpc_step(sc.initial, sc, cfg)
    assert isinstance(res.stalled, bool)
    assert np.all(res.controls.sum(axis=1) <= 1.0 + 1e-12)


def test_run_mpc_zero_budget_identical():
    sc = generate_scenario(13, 5)
    tr = run_mpc(sc, MpcConfig(horizon=4, budget=BudgetConstraint(0.0)), 25)
    ref = simulate(sc, 25)
    np.testing.assert_array_equal(tr.a, ref.a)
    np.testing.assert_array_equal(tr.d, ref.d)
    np.testing.assert_array_equal(tr.x, ref.x)


def test_run_mpc_single_step_applies_first_control():
    sc = generate_scenario(14, 3)
    cfg = MpcConfig(horizon=4)
    tr = run_mpc(sc, cfg, 1)
    res = solve_mpc_step(sc.initial, sc, cfg)
    np.testing.assert_array_equal(tr.controls[0], res.controls[0])
    np.testing.assert_array_equal(tr.a[1], rollout(sc, sc.initial, res.controls[:1]).a[1])
    assert len(tr.meta["iterations"]) == 1


def test_run_mpc_feasible_every_step():
    sc = generate_scenario(15, 6)
    budget = BudgetConstraint(0.4).resolve(sc)
    tr = run_mpc(sc, MpcConfig(horizon=5, budget=budget), 15)
    U = tr.control_matrix()
    assert np.all(U >= 0) and np.all(U <= budget.upper) and np.all(U.sum(axis=1) <= 0.4 + 1e-12)


def test_run_mpc_rejects_zero_steps():
    with pytest.raises(PreconditionError):
        run_mpc(generate_scenario(1, 2), MpcConfig(), 0)
