import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adoptnet import (
    ControlPolicy,
    DimensionError,
    InfeasibleControlError,
    SystemState,
    aggregate_adoption,
    make_scenario,
    simulate,
    step,
    validate_scenario,
)
from adoptnet.experiments import generate_scenario
from adoptnet.model import NetworkLayer, rollout
from adoptnet.stability import adoption_free_equilibrium

from .conftest import scalar_scenario


def test_scalar_scenario_is_valid():
    assert validate_scenario(scalar_scenario()).ok


def test_gamma_theta_violation_named():
    rep = validate_scenario(scalar_scenario(gamma=0.9, theta=0.2))
    assert not rep.ok
    assert any("gamma_j + theta_j" in v for v in rep.violations)


def test_no_stubborn_node_reachable():
    sc = make_scenario([[0, 1], [1, 0]], [[0, 1], [1, 0]], beta=0.4, gamma=0.3, theta=0.1,
                       delta=0.2, lam=0.6, xi=0.4, prejudice=0.5)
    rep = validate_scenario(sc)
    assert any("stubborn reachability" in v for v in rep.violations)


def test_partial_stubbornness_is_enough():
    # only community 0 is stubborn; 1 listens to 0
    sc = make_scenario([[0, 1], [1, 0]], [[0, 1], [1, 0]], beta=0.4, gamma=0.3, theta=0.1,
                       delta=0.2, lam=[0.5, 0.6], xi=[0.2, 0.4], prejudice=0.5)
    assert validate_scenario(sc).ok


def test_layer_violations():
    assert NetworkLayer([[0.5, 0.4], [0.5, 0.5]]).violations("L")
    assert NetworkLayer([[1.0, 0.0], [0.0, 1.0]]).violations("L")  # reducible
    assert not NetworkLayer([[0.5, 0.5], [1.0, 0.0]]).violations("L")
    with pytest.raises(DimensionError):
        NetworkLayer([[1.0, 0.0]])


def test_near_stochastic_rows_are_renormalised():
    W = NetworkLayer([[0.5, 0.5 + 5e-13], [1.0, 0.0]]).weights
    assert W.sum(axis=1)[0] == pytest.approx(1.0, abs=1e-16)


def test_state_violations():
    sc = scalar_scenario(a0=0.7, d0=0.5)
    assert any("a_j + d_j > 1" in v for v in validate_scenario(sc).violations)


def test_dimension_mismatch_raises():
    with pytest.raises(DimensionError):
        make_scenario(np.eye(2)[::-1], np.eye(2)[::-1], beta=[0.1, 0.2, 0.3], gamma=0.3,
                      theta=0.1, delta=0.2, lam=0.5, xi=0.2, prejudice=0.5)


def test_step_hand_value():
    sc = scalar_scenario(a0=0.1, d0=0.0, x0=0.5)
    nxt = step(sc.initial, sc)
    assert nxt.a[0] == pytest.approx(0.098, abs=1e-15)
    assert nxt.d[0] == pytest.approx(0.065, abs=1e-15)
    assert nxt.x[0] == pytest.approx(0.42, abs=1e-15)
    assert nxt.s[0] == pytest.approx(0.837, abs=1e-15)
    assert nxt.time == 1


def test_zero_control_matches_uncontrolled():
    sc = generate_scenario(3, 6)
    np.testing.assert_array_equal(step(sc.initial, sc).a, step(sc.initial, sc, np.zeros(6)).a)
    np.testing.assert_array_equal(step(sc.initial, sc).x, step(sc.initial, sc, np.zeros(6)).x)


def test_free_equilibrium_is_fixed():
    sc = generate_scenario(5, 7)
    eq = adoption_free_equilibrium(sc).point
    nxt = step(eq, sc)
    for f in ("a", "d", "x"):
        np.testing.assert_allclose(getattr(nxt, f), getattr(eq, f), atol=1e-12)


def test_step_rejects_bad_control():
    sc = scalar_scenario()
    with pytest.raises(InfeasibleControlError):
        step(sc.initial, sc, [0.6])  # x0 + u > 1
    with pytest.raises(InfeasibleControlError):
        step(sc.initial, sc, [-0.1])


def test_simulate_horizon_zero():
    sc = generate_scenario(1, 4)
    tr = simulate(sc, 0)
    assert tr.horizon == 0 and len(tr) == 1
    np.testing.assert_array_equal(tr.a[0], sc.initial.a)


def test_no_spontaneous_adoption():
    sc = generate_scenario(2, 5).with_initial(SystemState(np.zeros(5), np.zeros(5), np.full(5, 0.5)))
    assert np.all(simulate(sc, 200).a == 0.0)


def test_simulate_records_controls_and_checks_budget():
    sc = generate_scenario(4, 3)
    tr = simulate(sc, 5, ControlPolicy.constant([0.1, 0.0, 0.05], budget=0.2))
    assert tr.control_matrix().shape == (5, 3)
    with pytest.raises(InfeasibleControlError) as err:
        simulate(sc, 5, ControlPolicy.sequence(
            [[0.1, 0, 0], [0.1, 0, 0], [0.3, 0, 0], [0, 0, 0], [0, 0, 0]], budget=0.2))
    assert err.value.step == 2


def test_simulate_matches_repeated_step():
    sc = generate_scenario(9, 6)
    tr = simulate(sc, 30)
    st_ = sc.initial
    for _ in range(30):
        st_ = step(st_, sc)
    np.testing.assert_allclose(tr.final.a, st_.a, rtol=0, atol=1e-15)
    np.testing.assert_allclose(tr.final.x, st_.x, rtol=0, atol=1e-15)


def test_aggregate_adoption_conserves_mass():
    tr = simulate(generate_scenario(11, 8), 50)
    agg = aggregate_adoption(tr)
    assert agg.shape == (51, 3)
    np.testing.assert_allclose(agg.sum(axis=1), 1.0, atol=1e-12)


def test_rollout_matches_simulate_sequence():
    sc = generate_scenario(6, 4)
    U = np.full((8, 4), 0.05)
    a = rollout(sc, sc.initial, U)
    b = simulate(sc, 8, ControlPolicy.sequence(U))
    np.testing.assert_array_equal(a.a, b.a)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8),
       a=st.floats(0, 1), dfrac=st.floats(0, 1), steps=st.integers(1, 200))
def test_invariance_property(seed, n, a, dfrac, steps):
    sc = generate_scenario(seed, n)
    rng = np.random.default_rng(seed)
    av = rng.uniform(0, a, n)
    dv = rng.uniform(0, dfrac, n) * (1 - av)
    tr = simulate(sc.with_initial(SystemState(av, dv, rng.uniform(0, 1, n))), steps)
    assert np.max(np.abs(tr.s + tr.a + tr.d - 1)) <= 1e-12
    for M in (tr.a, tr.d, tr.x, tr.s):
        assert M.min() >= -1e-12 and M.max() <= 1 + 1e-12
