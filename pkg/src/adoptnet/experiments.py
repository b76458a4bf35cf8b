"""Seeded benchmark scenarios and the uncontrolled / constant / MPC comparison."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import formats
from .control import (
    BudgetConstraint,
    CostWeights,
    MpcConfig,
    SolverOptions,
    run_mpc,
    solve_constant_policy,
)
from .errors import NonConvergenceError, PreconditionError
from .model import (
    ControlPolicy,
    ModelParams,
    NetworkLayer,
    Scenario,
    SystemState,
    Trajectory,
    aggregate_adoption,
    simulate,
)

GENERATOR = "numpy.random.Generator(PCG64)"
EDGE_PROB = 0.3
INITIAL_ADOPTERS = 0.02


def _random_layer(rng: np.random.Generator, n: int) -> np.ndarray:
    edges = rng.random((n, n)) < EDGE_PROB
    idx = np.arange(n)
    edges[idx, (idx + 1) % n] = True
    weights = np.where(edges, 1.0 - rng.random((n, n)), 0.0)
    return weights / weights.sum(axis=1, keepdims=True)


def generate_scenario(seed: int, n: int) -> Scenario:
    """Deterministic random scenario for ``(seed, n)``.

    Draw order from ``Generator(PCG64(seed))``:

    1. physical layer, then social layer: an ``n x n`` uniform matrix for the
       Bernoulli(0.3) edge mask, the directed ring ``j -> j+1 (mod n)`` forced
       on, then an ``n x n`` uniform matrix for weights ``1 - U`` in (0, 1];
       rows are normalised to sum to one;
    2. ``beta ~ U[0.2, 0.9]``, ``delta ~ U[0.05, 0.3]``;
    3. ``gamma', theta' ~ U[0, 1)`` and a target sum ``S ~ U[0.1, 0.9)``;
       both are rescaled so that ``gamma + theta = S``;
    4. ``lam ~ U[0.3, 0.6]``, ``xi ~ U[0.1, 0.3]`` (redrawn where
       ``lam + xi > 1``, which these ranges never produce);
    5. ``prejudice ~ U[0.3, 0.8]``.

    The initial state has ``a = 0.02``, ``d = 0`` and ``x = prejudice``.
    """
    if n < 1:
        raise PreconditionError("n must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    physical = _random_layer(rng, n)
    social = _random_layer(rng, n)
    beta = rng.uniform(0.2, 0.9, n)
    delta = rng.uniform(0.05, 0.3, n)
    g, th = rng.random(n), rng.random(n)
    total = rng.uniform(0.1, 0.9, n)
    mass = np.maximum(g + th, 1e-300)
    gamma, theta = g / mass * total, th / mass * total
    lam = rng.uniform(0.3, 0.6, n)
    xi = rng.uniform(0.1, 0.3, n)
    bad = lam + xi > 1.0
    while bad.any():
        lam[bad] = rng.uniform(0.3, 0.6, bad.sum())
        xi[bad] = rng.uniform(0.1, 0.3, bad.sum())
        bad = lam + xi > 1.0
    prejudice = rng.uniform(0.3, 0.8, n)
    params = ModelParams(beta, gamma, theta, delta, lam, xi, prejudice)
    initial = SystemState(np.full(n, INITIAL_ADOPTERS), np.zeros(n), prejudice)
    return Scenario(NetworkLayer(physical), NetworkLayer(social), params, initial)


def effectiveness(traj: Trajectory) -> float:
    """Time average of the community-mean adopter fraction."""
    return float(aggregate_adoption(traj)[:, 1].mean())


def control_cost(traj: Trajectory) -> float:
    """Total applied effort, the sum over steps of ``||u(t)||_1``."""
    return float(np.abs(traj.control_matrix()).sum())


def config_to_dict(cfg: MpcConfig) -> dict:
    w, b, s = cfg.weights, cfg.budget, cfg.solver
    return {
        "horizon": cfg.horizon,
        "weights": None if w is None else {"q_a": w.q_a.tolist(), "q_d": w.q_d.tolist(),
                                           "l": w.l.tolist(), "terminal_weight": w.terminal_weight},
        "budget": None if b is None else {"c": b.c,
                                          "upper": None if b.upper is None else b.upper.tolist()},
        "solver": {"max_iter": s.max_iter, "grad_tol": s.grad_tol, "shrink": s.shrink,
                   "warm_start": s.warm_start, "gauss_newton": s.gauss_newton,
                   "armijo": s.armijo, "min_step": s.min_step, "gn_iter": s.gn_iter},
        "target": None if cfg.target is None else {"a": cfg.target.a.tolist(),
                                                   "d": cfg.target.d.tolist(),
                                                   "x": cfg.target.x.tolist()},
    }


def config_from_dict(doc: dict) -> MpcConfig:
    w = doc.get("weights")
    b = doc.get("budget")
    t = doc.get("target")
    return MpcConfig(
        horizon=int(doc.get("horizon", 10)),
        weights=None if w is None else CostWeights(w["q_a"], w["q_d"], w["l"],
                                                   float(w.get("terminal_weight", 10.0))),
        budget=None if b is None else BudgetConstraint(float(b["c"]), b.get("upper")),
        solver=SolverOptions(**doc.get("solver", {})),
        target=None if t is None else SystemState(t["a"], t["d"], t["x"]),
    )


@dataclass
class ComparisonReport:
    """Effectiveness (time-averaged mean adopter fraction) and cost (sum of
    ``||u||_1``) of the constant policy (CCP) and MPC runs on one seed."""

    seed: int
    n: int
    total_steps: int
    effectiveness_uncontrolled: float
    effectiveness_ccp: float
    effectiveness_mpc: float
    cost_ccp: float
    cost_mpc: float
    final_adoption: dict
    ccp_u: list
    ccp_certified: bool
    ccp_status: str
    config: dict
    generator: str = GENERATOR
    trajectories: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n": self.n,
            "total_steps": self.total_steps,
            "generator": self.generator,
            "effectiveness_definition": "mean over t=0..T of the community-mean adopter fraction",
            "cost_definition": "sum over t of the L1 norm of the applied control",
            "effectiveness_uncontrolled": self.effectiveness_uncontrolled,
            "effectiveness_ccp": self.effectiveness_ccp,
            "effectiveness_mpc": self.effectiveness_mpc,
            "cost_ccp": self.cost_ccp,
            "cost_mpc": self.cost_mpc,
            "final_adoption": self.final_adoption,
            "ccp_u": self.ccp_u,
            "ccp_certified": self.ccp_certified,
            "ccp_status": self.ccp_status,
            "config": self.config,
            "trajectories": {k: formats.trajectory_to_dict(v) for k, v in self.trajectories.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ComparisonReport":
        return cls(
            seed=doc["seed"], n=doc["n"], total_steps=doc["total_steps"],
            effectiveness_uncontrolled=doc["effectiveness_uncontrolled"],
            effectiveness_ccp=doc["effectiveness_ccp"], effectiveness_mpc=doc["effectiveness_mpc"],
            cost_ccp=doc["cost_ccp"], cost_mpc=doc["cost_mpc"],
            final_adoption=doc["final_adoption"], ccp_u=doc["ccp_u"],
            ccp_certified=doc["ccp_certified"], ccp_status=doc["ccp_status"],
            config=doc["config"], generator=doc.get("generator", GENERATOR),
            trajectories={k: formats.trajectory_from_dict(v)
                          for k, v in doc.get("trajectories", {}).items()},
        )


def run_comparison(seed: int, n: int, total_steps: int, config: Optional[MpcConfig] = None,
                   eta: Optional[float] = None, scenario: Optional[Scenario] = None) -> ComparisonReport:
    """Uncontrolled vs constant policy vs MPC on ``generate_scenario(seed, n)``.

    The constant policy is the best certified nudge when one exists.  If no
    candidate passes the certificate the best uncertified nudge is applied
    instead and ``ccp_certified`` is False.  The MPC terminal target is the
    constant policy's controlled equilibrium unless ``config.target`` is set.
    """
    sc = generate_scenario(seed, n) if scenario is None else scenario
    cfg = (config or MpcConfig()).resolve(sc)
    unc = simulate(sc, total_steps)
    try:
        ccp = solve_constant_policy(sc, cfg.weights, cfg.budget, eta, rng_seed=seed)
        ccp_u, certified, status = ccp.u, ccp.certified, ccp.status
        target = ccp.report.point
    except NonConvergenceError as exc:
        ccp_u, certified, status, target = np.zeros(sc.n), False, f"failed: {exc}", None
    ccp_traj = simulate(sc, total_steps, ControlPolicy.constant(ccp_u, budget=cfg.budget.c))
    if cfg.target is None:
        cfg = replace(cfg, target=target)
    mpc_traj = run_mpc(sc, cfg, total_steps)
    trajs = {"uncontrolled": unc, "ccp": ccp_traj, "mpc": mpc_traj}
    return ComparisonReport(
        seed=seed, n=sc.n, total_steps=total_steps,
        effectiveness_uncontrolled=effectiveness(unc),
        effectiveness_ccp=effectiveness(ccp_traj),
        effectiveness_mpc=effectiveness(mpc_traj),
        cost_ccp=control_cost(ccp_traj),
        cost_mpc=control_cost(mpc_traj),
        final_adoption={k: float(v.a[-1].mean()) for k, v in trajs.items()},
        ccp_u=np.asarray(ccp_u).tolist(), ccp_certified=bool(certified), ccp_status=status,
        config=config_to_dict(cfg), trajectories=trajs,
    )


def aggregate_csv(report: ComparisonReport) -> str:
    """Aggregate compartments per step for every run: ``run, t, s, a, d``."""
    rows = []
    for name, traj in report.trajectories.items():
        agg = aggregate_adoption(traj)
        for t, (s, a, d) in enumerate(agg):
            rows.append([name, traj.t0 + t, repr(float(s)), repr(float(a)), repr(float(d))])
    return formats._csv(rows, ["run", "t", "s", "a", "d"])


def communities_csv(report: ComparisonReport) -> str:
    """Per-community trajectories: ``run, t, j, a, d, x``."""
    rows = []
    for name, traj in report.trajectories.items():
        for t in range(len(traj)):
            for j in range(traj.n):
                rows.append([name, traj.t0 + t, j, repr(float(traj.a[t, j])),
                             repr(float(traj.d[t, j])), repr(float(traj.x[t, j]))])
    return formats._csv(rows, ["run", "t", "j", "a", "d", "x"])


def pareto_csv(report: ComparisonReport) -> str:
    """Cost against effectiveness per policy: ``policy, cost, effectiveness``."""
    rows = [["CCP", repr(report.cost_ccp), repr(report.effectiveness_ccp)],
            ["MPC", repr(report.cost_mpc), repr(report.effectiveness_mpc)]]
    return formats._csv(rows, ["policy", "cost", "effectiveness"])


def write_plot_data(report: ComparisonReport, directory) -> list[Path]:
    directory = Path(directory)
    out = []
    for name, text in (("aggregate.csv", aggregate_csv(report)),
                       ("communities.csv", communities_csv(report)),
                       ("pareto.csv", pareto_csv(report))):
        formats.write_text(directory / name, text)
        out.append(directory / name)
    return out


def export_report(report: Union[ComparisonReport, Trajectory, Scenario], path, format: str = "json") -> None:
    """Write a report, trajectory or scenario as ``csv`` or ``json``.

    Comparison reports in CSV form are the cost/effectiveness table.
    """
    if format not in ("csv", "json"):
        raise PreconditionError(f"unknown format {format!r}")
    if isinstance(report, ComparisonReport):
        text = formats.dumps(report.to_dict()) if format == "json" else pareto_csv(report)
    elif isinstance(report, Trajectory):
        text = formats.dumps(formats.trajectory_to_dict(report)) if format == "json" \
            else formats.trajectory_csv(report)
    elif isinstance(report, Scenario):
        if format != "json":
            raise PreconditionError("scenarios are exported as JSON only")
        text = formats.dumps(formats.scenario_to_dict(report))
    else:
        raise PreconditionError(f"cannot export {type(report).__name__}")
    formats.write_text(path, text)
