import csv
import json

import numpy as np
import pytest

from adoptnet import formats, validate_scenario
from adoptnet.control import BudgetConstraint, MpcConfig, SolverOptions
from adoptnet.experiments import (
    GENERATOR,
    ComparisonReport,
    config_from_dict,
    config_to_dict,
    export_report,
    generate_scenario,
    run_comparison,
    write_plot_data,
)
from adoptnet.model import simulate


def small_config(c=1.0):
    return MpcConfig(horizon=3, budget=BudgetConstraint(c), solver=SolverOptions(max_iter=30))


@pytest.fixture(scope="module")
def small_report():
    return run_comparison(3, 3, 8, small_config())


def test_generator_is_deterministic():
    a, b = generate_scenario(17, 6), generate_scenario(17, 6)
    assert formats.dumps(formats.scenario_to_dict(a)) == formats.dumps(formats.scenario_to_dict(b))
    c = generate_scenario(18, 6)
    assert not np.array_equal(a.params.beta, c.params.beta)


@pytest.mark.parametrize("seed", range(0, 200, 7))
def test_generated_scenarios_are_valid(seed):
    sc = generate_scenario(seed, 1 + seed % 10)
    assert validate_scenario(sc).ok
    p = sc.params
    assert np.all((0.2 <= p.beta) & (p.beta <= 0.9))
    assert np.all((0.05 <= p.delta) & (p.delta <= 0.3))
    gt = p.gamma + p.theta
    assert np.all((gt > 0.1 - 1e-15) & (gt < 0.9))
    assert np.all((0.3 <= p.lam) & (p.lam <= 0.6)) and np.all((0.1 <= p.xi) & (p.xi <= 0.3))
    assert np.all((0.3 <= p.prejudice) & (p.prejudice <= 0.8))
    assert np.all(sc.initial.a == 0.02) and np.all(sc.initial.d == 0.0)
    np.testing.assert_array_equal(sc.initial.x, p.prejudice)
    n = sc.n
    ring = sc.physical.weights[np.arange(n), (np.arange(n) + 1) % n]
    assert np.all(ring > 0)


def test_generator_rejects_empty():
    from adoptnet import PreconditionError
    with pytest.raises(PreconditionError):
        generate_scenario(0, 0)


def test_report_fields_and_bounds(small_report):
    r = small_report
    for e in (r.effectiveness_uncontrolled, r.effectiveness_ccp, r.effectiveness_mpc):
        assert 0.0 <= e <= 1.0
    assert 0.0 <= r.cost_ccp <= 1.0 * 8 + 1e-9
    assert 0.0 <= r.cost_mpc <= 1.0 * 8 + 1e-9
    assert r.generator == GENERATOR
    assert set(r.trajectories) == {"uncontrolled", "ccp", "mpc"}


def test_report_bytes_deterministic(small_report):
    again = run_comparison(3, 3, 8, small_config())
    assert formats.dumps(small_report.to_dict()) == formats.dumps(again.to_dict())


def test_report_json_round_trip(small_report, tmp_path):
    path = tmp_path / "r.json"
    export_report(small_report, path, "json")
    back = ComparisonReport.from_dict(json.loads(path.read_text()))
    assert formats.dumps(back.to_dict()) == path.read_text()


def test_zero_budget_collapses():
    r = run_comparison(5, 3, 10, small_config(0.0))
    assert r.cost_ccp == 0.0 and r.cost_mpc == 0.0
    assert r.effectiveness_ccp == r.effectiveness_uncontrolled == r.effectiveness_mpc


def test_config_round_trip():
    cfg = MpcConfig(horizon=7, budget=BudgetConstraint(0.3),
                    solver=SolverOptions(max_iter=11, gauss_newton=True))
    assert config_to_dict(config_from_dict(config_to_dict(cfg))) == config_to_dict(cfg)


def test_scenario_json_round_trip(tmp_path):
    sc = generate_scenario(23, 5)
    path = tmp_path / "sc.json"
    export_report(sc, path, "json")
    back = formats.load_scenario(path)
    np.testing.assert_array_equal(back.physical.weights, sc.physical.weights)
    np.testing.assert_array_equal(back.social.weights, sc.social.weights)
    for f in ("beta", "gamma", "theta", "delta", "lam", "xi", "prejudice"):
        np.testing.assert_array_equal(getattr(back.params, f), getattr(sc.params, f))
    np.testing.assert_array_equal(back.initial.a, sc.initial.a)


def test_trajectory_csv_rows_and_round_trip(tmp_path):
    sc = generate_scenario(7, 5)
    tr = simulate(sc, 100)
    path = tmp_path / "traj.csv"
    export_report(tr, path, "csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 101 * 5 + 1
    back = formats.read_trajectory_csv(path)
    np.testing.assert_array_equal(back.a, tr.a)
    np.testing.assert_array_equal(back.x, tr.x)
    first = path.read_bytes()
    export_report(tr, path, "csv")
    assert path.read_bytes() == first


def test_plot_data(small_report, tmp_path):
    paths = write_plot_data(small_report, tmp_path / "plots")
    assert [p.name for p in paths] == ["aggregate.csv", "communities.csv", "pareto.csv"]
    with open(paths[0]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * 9
    for r in rows:
        assert abs(float(r["s"]) + float(r["a"]) + float(r["d"]) - 1) <= 1e-12
    with open(paths[2]) as fh:
        assert [r["policy"] for r in csv.DictReader(fh)] == ["CCP", "MPC"]


def test_export_errors(small_report, tmp_path):
    from adoptnet import PreconditionError
    with pytest.raises(PreconditionError):
        export_report(small_report, tmp_path / "x", "xml")
    with pytest.raises(PreconditionError):
        export_report(generate_scenario(1, 2), tmp_path / "x.csv", "csv")
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        export_report(small_report, blocker / "r.json", "json")


def test_malformed_scenario_document():
    from adoptnet.formats import FormatError
    with pytest.raises(FormatError):
        formats.scenario_from_dict({"n": 2})
