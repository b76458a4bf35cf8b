"""Budget-constrained opinion nudging.

Controls ``u`` enter the opinion update as a shift of the anchor,
``x+ = (I - L - X)(x0 + u) + ...``, subject to ``0 <= u <= 1 - x0`` and
``sum(u) <= C`` at every step.  Two policies are provided: a constant nudge
chosen from the controlled equilibria, and a receding-horizon controller
solved by projected gradient descent with adjoint gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .errors import DimensionError, NonConvergenceError, PreconditionError
from .model import ControlPolicy, Scenario, SystemState, Trajectory, check_control, rollout
from .stability import (
    Certificate,
    EquilibriumReport,
    Kind,
    DIFFUSED_FLOOR,
    certify_diffused,
    damped_fixed_point,
    r0_extremes,
)

__all__ = [
    "CostWeights", "BudgetConstraint", "SolverOptions", "MpcConfig", "ControlPolicy",
    "ConstantPolicyResult", "MpcStepResult", "project_budget_box", "project_sequence",
    "trajectory_cost", "controlled_equilibrium", "constant_policy_objective",
    "certify_constant_policy", "solve_constant_policy", "horizon_cost", "horizon_gradient",
    "solve_mpc_step", "run_mpc",
]


@dataclass(frozen=True)
class CostWeights:
    """Adoption reward ``q_a``, dissatisfaction penalty ``q_d``, effort penalty ``l``.

    ``terminal_weight`` scales the quadratic pull of the last predicted state
    towards the MPC target.
    """

    q_a: np.ndarray
    q_d: np.ndarray
    l: np.ndarray
    terminal_weight: float = 10.0

    def __post_init__(self):
        for name in ("q_a", "q_d", "l"):
            v = np.array(getattr(self, name), dtype=np.float64)
            if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v < 0):
                raise PreconditionError(f"{name} must be a finite nonnegative vector")
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        if not (np.isfinite(self.terminal_weight) and self.terminal_weight >= 0):
            raise PreconditionError("terminal_weight must be finite and nonnegative")
        if not (self.q_a.shape == self.q_d.shape == self.l.shape):
            raise DimensionError("weight vectors must have equal length")

    @classmethod
    def uniform(cls, n: int, q_a: float = 1.0, q_d: float = 1.0, l: float = 0.1,
                terminal_weight: float = 10.0) -> "CostWeights":
        return cls(np.full(n, q_a), np.full(n, q_d), np.full(n, l), terminal_weight)


@dataclass(frozen=True)
class BudgetConstraint:
    """Per-step cap ``c`` on ``sum(u)`` and componentwise cap ``upper``.

    ``upper=None`` means "derive ``1 - x0`` from the scenario"; see
    :meth:`resolve`.
    """

    c: float
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.isfinite(self.c) or self.c < 0:
            raise PreconditionError(f"budget must be finite and >= 0, got {self.c}")
        if self.upper is not None:
            up = np.array(self.upper, dtype=np.float64)
            if np.any(up < 0) or np.any(up > 1):
                raise PreconditionError("upper caps must lie in [0,1]")
            up.flags.writeable = False
            object.__setattr__(self, "upper", up)

    @classmethod
    def for_scenario(cls, scenario: Scenario, c: float) -> "BudgetConstraint":
        return cls(float(c), np.clip(1.0 - scenario.params.prejudice, 0.0, 1.0))

    def resolve(self, scenario: Scenario) -> "BudgetConstraint":
        if self.upper is not None:
            if self.upper.shape != (scenario.n,):
                raise DimensionError("budget caps do not match community count")
            return self
        return BudgetConstraint.for_scenario(scenario, self.c)


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 200
    grad_tol: float = 1e-6
    shrink: float = 0.5
    warm_start: bool = True
    gauss_newton: bool = False
    armijo: float = 1e-4
    min_step: float = 1e-12
    gn_iter: int = 5

    def __post_init__(self):
        if self.max_iter < 1 or self.grad_tol <= 0 or not 0 < self.shrink < 1 or self.min_step <= 0:
            raise PreconditionError("solver tolerances must be positive and shrink in (0,1)")


@dataclass(frozen=True)
class MpcConfig:
    """Receding-horizon settings; ``weights``/``budget`` default per scenario."""

    horizon: int = 10
    weights: Optional[CostWeights] = None
    budget: Optional[BudgetConstraint] = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    target: Optional[SystemState] = None

    def __post_init__(self):
        if self.horizon < 1:
            raise PreconditionError("horizon must be >= 1")

    def resolve(self, scenario: Scenario) -> "MpcConfig":
        weights = self.weights or CostWeights.uniform(scenario.n)
        budget = (self.budget or BudgetConstraint(1.0)).resolve(scenario)
        return replace(self, weights=weights, budget=budget)


def project_budget_box(v, budget: BudgetConstraint) -> np.ndarray:
    """Euclidean projection onto ``{0 <= u <= upper, sum(u) <= c}``."""
    v = np.asarray(v, dtype=np.float64)
    if budget.upper is None:
        raise PreconditionError("budget caps unresolved; call budget.resolve(scenario)")
    if budget.c < 0:
        raise PreconditionError("empty feasible set: budget < 0")
    if not np.all(np.isfinite(v)):
        raise PreconditionError("cannot project a non-finite vector")
    up = np.ascontiguousarray(budget.upper)
    return kernels.project_rows(np.ascontiguousarray(v.reshape(1, -1)), up, float(budget.c))[0]


def project_sequence(U, budget: BudgetConstraint) -> np.ndarray:
    """Project every row (stage) of a control sequence."""
    return kernels.project_rows(np.ascontiguousarray(U, dtype=np.float64),
                                np.ascontiguousarray(budget.upper), float(budget.c))


def _target_array(target: Optional[SystemState], n: int) -> np.ndarray:
    if target is None:
        return np.zeros((3, n))
    return np.ascontiguousarray(np.vstack([target.a, target.d, target.x]))


def trajectory_cost(traj: Trajectory, weights: CostWeights,
                    target: Optional[SystemState] = None) -> float:
    """Stage costs over the recorded transitions plus the terminal penalty."""
    U = traj.control_matrix()
    N = traj.horizon
    if U.shape[0] != N:
        raise DimensionError(f"{U.shape[0]} controls for {N} transitions")
    A, D = traj.a[:N], traj.d[:N]
    cost = float(np.sum(-weights.q_a * A ** 2 + weights.q_d * D ** 2 + weights.l * U ** 2))
    if target is not None:
        e = np.concatenate([traj.a[N] - target.a, traj.d[N] - target.d, traj.x[N] - target.x])
        cost += weights.terminal_weight * float(e @ e)
    return cost


# ----------------------------------------------------------------------------
# Constant policy


def controlled_equilibrium(scenario: Scenario, u_const, budget: Optional[BudgetConstraint] = None,
                           seed: float = 0.01, start: Optional[SystemState] = None,
                           tol: float = 1e-10) -> EquilibriumReport:
    """Equilibrium of the dynamics under the constant nudge ``u_const``.

    A constant nudge only shifts the opinion anchor to ``x0 + u``, so this is
    the damped fixed-point search on that shifted scenario.  ``start`` warm
    starts the search; its adopter share is floored at ``seed`` so an
    adoption-free start cannot pin the iteration at ``a = 0``.
    """
    u = np.asarray(u_const, dtype=np.float64)
    if u.shape != (scenario.n,):
        raise DimensionError("constant control must have one entry per community")
    check_control(u, scenario.params.prejudice, None if budget is None else budget.c)
    shifted = scenario.with_prejudice(scenario.params.prejudice + u)
    n = scenario.n
    if start is None:
        a0, d0, x0 = np.full(n, seed), np.zeros(n), shifted.params.prejudice
    else:
        a0, d0, x0 = np.maximum(start.a, seed), start.d, start.x
        d0 = np.minimum(d0, 1.0 - a0)
    point, res, iters = damped_fixed_point(shifted, a0, d0, x0, tol)
    kind = Kind.ADOPTION_DIFFUSED if np.all(point.a > DIFFUSED_FLOOR) else Kind.ADOPTION_FREE
    return EquilibriumReport(kind, point, res, iterations=iters)


def constant_policy_objective(report: EquilibriumReport, u, weights: CostWeights) -> float:
    a, d = report.point.a, report.point.d
    u = np.asarray(u, dtype=np.float64)
    return float(np.sum(-weights.q_a * a ** 2 + weights.q_d * d ** 2 + weights.l * u ** 2))


def certify_constant_policy(scenario: Scenario, u, report: EquilibriumReport,
                            eta: Optional[float] = None) -> EquilibriumReport:
    """Check instability of the free state and local stability of the diffused one.

    The nudge is folded into the opinion anchor; the initial opinions stay
    those of ``scenario`` so the opinion bounds describe the controlled run.
    """
    shifted = scenario.with_prejudice(scenario.params.prejudice + np.asarray(u, dtype=np.float64))
    base = replace(report, r0=r0_extremes(shifted))
    return certify_diffused(base, shifted, eta)


@dataclass
class ConstantPolicyResult:
    """Best constant nudge found.

    When no candidate passes the certificate, ``certified`` is False,
    ``status`` is ``"infeasible constraint set"`` and ``u``/``report``/
    ``objective`` describe the best uncertified candidate.
    """

    u: np.ndarray
    report: EquilibriumReport
    objective: float
    certified: bool
    status: str
    evaluations: int = 0
    certified_objective: Optional[float] = None
    certified_u: Optional[np.ndarray] = None

    def __iter__(self):
        return iter((self.u, self.report, self.objective))


def _pattern_search(evaluate, u0, project, h0: float, h_min: float):
    """Coordinate pattern search on the feasible set, minimising ``evaluate`` keys."""
    u = project(u0)
    best = evaluate(u)
    h = h0
    n = u.shape[0]
    while h >= h_min:
        improved = False
        for j in range(n):
            for sgn in (1.0, -1.0):
                cand = u.copy()
                cand[j] += sgn * h
                cand = project(cand)
                if np.array_equal(cand, u):
                    continue
                key = evaluate(cand)
                if key < best:
                    u, best, improved = cand, key, True
        if not improved:
            h *= 0.5
    return u, best


def solve_constant_policy(scenario: Scenario, weights: Optional[CostWeights] = None,
                          budget: Optional[BudgetConstraint] = None, eta: Optional[float] = None,
                          rng_seed: int = 0, n_random: int = 8, h_min: float = 1e-4,
                          seed: float = 0.01) -> ConstantPolicyResult:
    """Multi-start projected pattern search over constant nudges.

    Candidates are ranked by (uncertified, objective): any certified candidate
    beats every uncertified one, so the search minimises the objective within
    the certified region once it reaches it, and over the whole box otherwise.
    Starts: zero, the budget-saturating uniform point and ``n_random`` seeded
    random feasible points.
    """
    n = scenario.n
    weights = weights or CostWeights.uniform(n)
    budget = (budget or BudgetConstraint(1.0)).resolve(scenario)
    cache: dict[bytes, tuple] = {}
    warm = {"point": None}
    best_cert: list = [None]
    best_any: list = [None]

    def evaluate(u):
        key = u.tobytes()
        if key in cache:
            return cache[key][0]
        try:
            rep = controlled_equilibrium(scenario, u, budget, seed=seed, start=warm["point"])
        except NonConvergenceError:
            rank = (2, np.inf)
            cache[key] = (rank, None)
            return rank
        warm["point"] = rep.point
        obj = constant_policy_objective(rep, u, weights)
        cert = certify_constant_policy(scenario, u, rep, eta)
        ok = cert.certificate is Certificate.LOCAL_STABLE
        rank = (0 if ok else 1, obj)
        cache[key] = (rank, cert)
        entry = (obj, u.copy(), cert)
        if best_any[0] is None or obj < best_any[0][0]:
            best_any[0] = entry
        if ok and (best_cert[0] is None or obj < best_cert[0][0]):
            best_cert[0] = entry
        return rank

    def project(v):
        return project_budget_box(v, budget)

    rng = np.random.default_rng(rng_seed)
    starts = [np.zeros(n), np.full(n, budget.c / n)]
    for _ in range(n_random):
        starts.append(rng.uniform(0.0, 1.0, n) * budget.upper)
    h0 = max(min(budget.c, float(np.max(budget.upper, initial=0.0))) / 4, h_min)
    for u0 in starts:
        _pattern_search(evaluate, u0, project, h0, h_min)

    if best_any[0] is None:
        raise NonConvergenceError("no constant policy candidate reached an equilibrium")
    if best_cert[0] is not None:
        obj, u, cert = best_cert[0]
        return ConstantPolicyResult(u, cert, obj, True, "optimal", len(cache), obj, u)
    obj, u, cert = best_any[0]
    return ConstantPolicyResult(u, cert, obj, False, "infeasible constraint set", len(cache))


# ----------------------------------------------------------------------------
# Receding horizon


def _cost_grad(scenario: Scenario, state: SystemState, U, weights: CostWeights,
               target: Optional[SystemState], want_grad: bool = True):
    n = scenario.n
    return kernels.horizon_cost_grad(
        *scenario.packed, np.ascontiguousarray(state.a), np.ascontiguousarray(state.d),
        np.ascontiguousarray(state.x), np.ascontiguousarray(U, dtype=np.float64),
        weights.q_a, weights.q_d, weights.l, float(weights.terminal_weight),
        _target_array(target, n), target is not None, want_grad)


def horizon_cost(scenario: Scenario, state: SystemState, U, weights: CostWeights,
                 target: Optional[SystemState] = None) -> float:
    return _cost_grad(scenario, state, U, weights, target, False)[0]


def horizon_gradient(scenario: Scenario, state: SystemState, U, weights: CostWeights,
                     target: Optional[SystemState] = None):
    """``(cost, dcost/dU)`` by one forward rollout and one reverse adjoint sweep."""
    return _cost_grad(scenario, state, U, weights, target, True)


def _stage_jacobians(scenario: Scenario, A, D, X):
    """State Jacobians of the step map along a predicted trajectory."""
    p = scenario.params
    W, Wt = scenario.physical.weights, scenario.social.weights
    n = scenario.n
    out = []
    for k in range(A.shape[0] - 1):
        a, d, x = A[k], D[k], X[k]
        s = 1.0 - a - d
        wa = W @ a
        J = np.zeros((3 * n, 3 * n))
        J[:n, :n] = np.diag(1.0 - p.delta - p.beta * x * wa) + (p.beta * x * s)[:, None] * W
        J[:n, n:2 * n] = np.diag(-p.beta * x * wa)
        J[:n, 2 * n:] = np.diag(p.beta * s * wa)
        J[n:2 * n, :n] = np.diag(p.delta - p.theta * (1.0 - x))
        J[n:2 * n, n:2 * n] = np.diag(1.0 - p.gamma * x - p.theta * (1.0 - x))
        J[n:2 * n, 2 * n:] = np.diag(-p.gamma * d - p.theta * s)
        J[2 * n:, :n] = p.xi[:, None] * W
        J[2 * n:, 2 * n:] = p.lam[:, None] * Wt
        out.append(J)
    return out


def _gauss_newton_hessian(scenario: Scenario, state: SystemState, U, weights: CostWeights,
                          target: Optional[SystemState]):
    """Convex Hessian model: exact for the effort, dissatisfaction and terminal terms.

    The concave adoption reward is left out of the model (its curvature only
    enters through the line search).
    """
    N, n = U.shape
    traj = rollout(scenario, state, U)
    Js = _stage_jacobians(scenario, traj.a, traj.d, traj.x)
    Bu = np.zeros((3 * n, n))
    Bu[2 * n:] = np.diag(scenario.params.alpha)
    H = np.diag(np.tile(2.0 * weights.l, N))
    S = np.zeros((3 * n, N * n))  # d z_k / d U
    for k in range(N):
        if k > 0:
            Sd = S[n:2 * n]
            H += 2.0 * Sd.T @ (weights.q_d[:, None] * Sd)
        S = Js[k] @ S
        S[:, k * n:(k + 1) * n] += Bu
    if target is not None:
        H += 2.0 * weights.terminal_weight * S.T @ S
    return H


def _qp_direction(H, g, U, budget: BudgetConstraint, iters: int = 300):
    """Approximately minimise ``g.p + p.H.p/2`` over ``U + p`` feasible (FISTA)."""
    N, n = U.shape
    L = max(np.linalg.eigvalsh(H)[-1], 1e-12)
    gflat = g.ravel()
    Z = U.copy()
    Y = U.copy()
    t = 1.0
    for _ in range(iters):
        grad = gflat + H @ (Y - U).ravel()
        Z_new = project_sequence(Y - grad.reshape(N, n) / L, budget)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        Y = Z_new + ((t - 1.0) / t_new) * (Z_new - Z)
        Z, t = Z_new, t_new
    return Z - U


@dataclass
class MpcStepResult:
    controls: np.ndarray
    predicted: Trajectory
    cost: float
    iterations: int
    converged: bool
    stalled: bool
    history: list[float] = field(default_factory=list)

    def __iter__(self):
        return iter((self.controls, self.predicted, self.cost))


def solve_mpc_step(state: SystemState, scenario: Scenario, config: MpcConfig,
                   U0=None) -> MpcStepResult:
    """Solve one finite-horizon problem from ``state``.

    Projected gradient descent with Barzilai-Borwein trial steps and monotone
    Armijo backtracking; every iterate is projected stage by stage onto the
    budget box, so the returned controls are always feasible.  ``history`` lists the accepted costs (nonincreasing).
    """
    cfg = config.resolve(scenario)
    opts, weights, budget, target = cfg.solver, cfg.weights, cfg.budget, cfg.target
    N, n = cfg.horizon, scenario.n
    U = np.zeros((N, n)) if U0 is None else np.array(U0, dtype=np.float64).reshape(N, n)
    U = project_sequence(U, budget)
    cost, g = horizon_gradient(scenario, state, U, weights, target)
    history = [cost]
    step_len = 1.0
    converged = stalled = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        if np.max(np.abs(U - project_sequence(U - g, budget))) <= opts.grad_tol:
            converged = True
            break
        t = min(step_len, 1e6)
        while True:
            Un = project_sequence(U - t * g, budget)
            dec = float(np.sum(g * (Un - U)))
            cn = horizon_cost(scenario, state, Un, weights, target)
            if cn <= cost + opts.armijo * dec and cn <= cost:
                break
            t *= opts.shrink
            if t < opts.min_step:
                stalled = True
                break
        if stalled:
            break
        U_prev, g_prev = U, g
        U = Un
        cost, g = horizon_gradient(scenario, state, U, weights, target)
        history.append(cost)
        # Barzilai-Borwein trial length for the next line search
        sv, yv = U - U_prev, g - g_prev
        sy = float(np.sum(sv * yv))
        step_len = float(np.sum(sv * sv)) / sy if sy > 0 else 2.0 * t

    if opts.gauss_newton and not stalled:
        for _ in range(opts.gn_iter):
            H = _gauss_newton_hessian(scenario, state, U, weights, target)
            P = _qp_direction(H, g, U, budget)
            dec = float(np.sum(g * P))
            if dec >= 0:
                break
            t = 1.0
            accepted = False
            while t >= opts.min_step:
                Un = project_sequence(U + t * P, budget)
                cn = horizon_cost(scenario, state, Un, weights, target)
                if cn <= cost + opts.armijo * t * dec and cn <= cost:
                    accepted = True
                    break
                t *= opts.shrink
            if not accepted:
                break
            U = Un
            cost, g = horizon_gradient(scenario, state, U, weights, target)
            history.append(cost)

    predicted = rollout(scenario, state, U)
    return MpcStepResult(U, predicted, trajectory_cost(predicted, weights, target), it,
                         converged, stalled, history)


def run_mpc(scenario: Scenario, config: MpcConfig, total_steps: int,
            initial: Optional[SystemState] = None) -> Trajectory:
    """Closed loop: solve, apply the first control, shift the plan, repeat."""
    if total_steps < 1:
        raise PreconditionError("total_steps must be >= 1")
    cfg = config.resolve(scenario)
    N, n = cfg.horizon, scenario.n
    state = scenario.initial if initial is None else initial
    A = np.empty((total_steps + 1, n))
    D = np.empty((total_steps + 1, n))
    X = np.empty((total_steps + 1, n))
    A[0], D[0], X[0] = state.a, state.d, state.x
    controls = np.empty((total_steps, n))
    stalled, iters = [], []
    plan = np.zeros((N, n))
    for t in range(total_steps):
        res = solve_mpc_step(state, scenario, cfg, plan if cfg.solver.warm_start else None)
        u0 = res.controls[0].copy()
        controls[t] = u0
        nxt = rollout(scenario, state, u0.reshape(1, n))
        state = SystemState(nxt.a[1], nxt.d[1], nxt.x[1], state.time + 1)
        A[t + 1], D[t + 1], X[t + 1] = nxt.a[1], nxt.d[1], nxt.x[1]
        stalled.append(res.stalled)
        iters.append(res.iterations)
        plan = np.vstack([res.controls[1:], res.controls[-1:]])
    return Trajectory(A, D, X, controls, scenario.initial.time if initial is None else initial.time,
                      meta={"stalled": stalled, "iterations": iters})
