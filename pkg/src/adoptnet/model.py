"""Adoption-opinion dynamics on a two-layer community network.

Each community ``j`` carries adopter and dissatisfied fractions ``a_j``,
``d_j`` (susceptibles are ``s_j = 1 - a_j - d_j`` and never stored) and an
opinion ``x_j``.  One step of the coupled map is::

    a+ = a + B diag(x) diag(1 - a - d) W a - D a
    d+ = d - G diag(x) d + D a + T (I - diag(x)) (1 - a - d)
    x+ = (I - L - X)(x0 + u) + L Wt x + X W a

with ``B, G, T, D, L, X`` the diagonal matrices of ``beta, gamma, theta,
delta, lam, xi`` and ``u`` an optional opinion nudge (zero when absent).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, InfeasibleControlError, PreconditionError

STOCHASTIC_TOL = 1e-12
BOUND_TOL = 1e-12


def _frozen(values, name: str, ndim: int = 1) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def _reaches(adj: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Boolean mask of nodes with a directed path (length >= 0) into ``targets``."""
    hit = targets.copy()
    frontier = targets.copy()
    while frontier.any():
        # j reaches the set if it has an edge j -> k with k already reached
        new = adj[:, frontier].any(axis=1) & ~hit
        hit |= new
        frontier = new
    return hit


def _strongly_connected(adj: np.ndarray) -> bool:
    start = np.zeros(adj.shape[0], dtype=bool)
    start[0] = True
    return bool(_reaches(adj, start).all() and _reaches(adj.T, start).all())


@dataclass(frozen=True)
class NetworkLayer:
    """Weighted directed graph stored as a row-stochastic weight matrix.

    Row ``j`` holds the out-weights ``W[j, k]`` of community ``j``.  Rows whose
    sums are within ``STOCHASTIC_TOL`` of one (but not already within a few
    ulps) are divided by their sum so the stored matrix is stochastic to
    rounding.
    """

    weights: np.ndarray

    def __post_init__(self):
        W = np.array(self.weights, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] == 0:
            raise DimensionError(f"weights must be a non-empty square matrix, got shape {W.shape}")
        sums = W.sum(axis=1)
        # leave rows already exact to a few ulps alone so serialisation round-trips
        err = np.abs(sums - 1.0)
        close = (err <= STOCHASTIC_TOL) & (err > 4 * np.finfo(float).eps)
        W[close] = W[close] / sums[close, None]
        W.flags.writeable = False
        object.__setattr__(self, "weights", W)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def violations(self, name: str) -> list[str]:
        W = self.weights
        out = []
        if not np.all(np.isfinite(W)):
            out.append(f"{name}: weights must be finite")
            return out
        if np.any(W < 0):
            out.append(f"{name}: weights must be nonnegative")
        bad = np.flatnonzero(np.abs(W.sum(axis=1) - 1.0) > STOCHASTIC_TOL)
        if bad.size:
            out.append(f"{name}: rows {bad.tolist()} do not sum to 1 (not row-stochastic)")
        if not _strongly_connected(W > 0):
            out.append(f"{name}: graph is not strongly connected (not irreducible)")
        return out


@dataclass(frozen=True)
class ModelParams:
    """Per-community rates and opinion weights.

    ``lam`` is the social susceptibility, ``xi`` the adoption-feedback weight and
    ``prejudice`` the anchor opinion ``x(0)`` that enters every opinion update.
    The stubbornness weight ``alpha = 1 - lam - xi`` is derived.
    """

    beta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    delta: np.ndarray
    lam: np.ndarray
    xi: np.ndarray
    prejudice: np.ndarray

    def __post_init__(self):
        for name in ("beta", "gamma", "theta", "delta", "lam", "xi", "prejudice"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        sizes = {getattr(self, f).shape[0] for f in
                 ("beta", "gamma", "theta", "delta", "lam", "xi", "prejudice")}
        if len(sizes) != 1:
            raise DimensionError(f"parameter vectors have mismatched lengths {sorted(sizes)}")

    @property
    def n(self) -> int:
        return self.beta.shape[0]

    @cached_property
    def alpha(self) -> np.ndarray:
        alpha = 1.0 - self.lam - self.xi
        alpha.flags.writeable = False
        return alpha

    def with_prejudice(self, prejudice) -> "ModelParams":
        return ModelParams(self.beta, self.gamma, self.theta, self.delta,
                           self.lam, self.xi, prejudice)

    def violations(self) -> list[str]:
        out = []
        for name in ("beta", "gamma", "theta", "delta", "lam", "xi", "prejudice"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)):
                out.append(f"{name} must be finite")
                continue
            bad = np.flatnonzero((v < 0) | (v > 1))
            if bad.size:
                out.append(f"{name} outside [0,1] at communities {bad.tolist()}")
        bad = np.flatnonzero((self.alpha < -BOUND_TOL) | (self.alpha > 1 + BOUND_TOL))
        if bad.size:
            out.append(f"alpha = 1 - lambda - xi outside [0,1] at communities {bad.tolist()}")
        gt = self.gamma + self.theta
        bad = np.flatnonzero((gt <= 0) | (gt >= 1))
        if bad.size:
            out.append(f"gamma_j + theta_j not in (0,1) at communities {bad.tolist()}")
        return out


@dataclass(frozen=True)
class SystemState:
    """Adopter and dissatisfied fractions plus opinions at step ``time``."""

    a: np.ndarray
    d: np.ndarray
    x: np.ndarray
    time: int = 0

    def __post_init__(self):
        for name in ("a", "d", "x"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        if not (self.a.shape == self.d.shape == self.x.shape):
            raise DimensionError("state vectors a, d, x must have equal length")
        if self.time < 0:
            raise PreconditionError("time must be nonnegative")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def s(self) -> np.ndarray:
        return 1.0 - self.a - self.d

    def violations(self, tol: float = 0.0) -> list[str]:
        out = []
        for name in ("a", "d", "x"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v < -tol) or np.any(v > 1 + tol):
                out.append(f"state component {name} outside [0,1]")
        bad = np.flatnonzero(self.a + self.d > 1 + tol)
        if bad.size:
            out.append(f"a_j + d_j > 1 at communities {bad.tolist()}")
        return out


@dataclass(frozen=True)
class Scenario:
    """Physical layer, social layer, parameters and initial state."""

    physical: NetworkLayer
    social: NetworkLayer
    params: ModelParams
    initial: SystemState

    def __post_init__(self):
        sizes = {self.physical.n, self.social.n, self.params.n, self.initial.n}
        if len(sizes) != 1:
            raise DimensionError(
                f"community counts disagree: physical={self.physical.n}, social={self.social.n}, "
                f"params={self.params.n}, initial={self.initial.n}")

    @property
    def n(self) -> int:
        return self.params.n

    @cached_property
    def packed(self) -> tuple:
        """Contiguous arrays in kernel order (W, Wt, beta, ..., alpha, prejudice)."""
        p = self.params
        return tuple(np.ascontiguousarray(v, dtype=np.float64) for v in (
            self.physical.weights, self.social.weights, p.beta, p.gamma, p.theta,
            p.delta, p.lam, p.xi, p.alpha, p.prejudice))

    def with_prejudice(self, prejudice) -> "Scenario":
        """Same scenario with a different opinion anchor; the initial state is kept."""
        return Scenario(self.physical, self.social, self.params.with_prejudice(prejudice), self.initial)

    def with_initial(self, initial: SystemState) -> "Scenario":
        return Scenario(self.physical, self.social, self.params, initial)


def make_scenario(physical, social, *, beta, gamma, theta, delta, lam, xi, prejudice,
                  a0=None, d0=None, x0=None) -> Scenario:
    """Build a scenario from plain arrays; ``x0`` defaults to ``prejudice``.

    Scalars for rates and states are broadcast to the layer size.
    """
    physical = NetworkLayer(physical)
    n = physical.n
    vec = lambda v: np.broadcast_to(np.asarray(v, dtype=np.float64), (n,)).copy() \
        if np.ndim(v) == 0 else v
    params = ModelParams(*(vec(v) for v in (beta, gamma, theta, delta, lam, xi, prejudice)))
    a0 = np.zeros(n) if a0 is None else vec(a0)
    d0 = np.zeros(n) if d0 is None else vec(d0)
    x0 = params.prejudice if x0 is None else vec(x0)
    return Scenario(physical, NetworkLayer(social), params, SystemState(a0, d0, x0))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_scenario(scenario: Scenario) -> ValidationReport:
    """Collect every violated modelling assumption; an empty report means valid.

    Dimension mismatches cannot reach this point: they raise
    :class:`DimensionError` when the scenario is constructed.
    """
    v = []
    v += scenario.physical.violations("physical layer")
    v += scenario.social.violations("social layer")
    v += scenario.params.violations()
    v += scenario.initial.violations()
    alpha = scenario.params.alpha
    stubborn = alpha > 0
    reach = _reaches(scenario.social.weights > 0, stubborn)
    if not reach.all():
        v.append("stubborn reachability violated: communities "
                 f"{np.flatnonzero(~reach).tolist()} reach no stubborn node (alpha_k > 0) "
                 "in the social layer")
    return ValidationReport(v)


@dataclass(frozen=True)
class ControlPolicy:
    """Opinion nudge schedule: ``constant``, ``sequence`` or ``none``.

    ``budget`` is the per-step cap ``C`` on ``sum(u)``; ``None`` skips the
    budget check (the box ``0 <= u <= 1 - x0`` is always enforced).
    """

    kind: str = "none"
    u: Optional[np.ndarray] = None
    us: Optional[np.ndarray] = None
    budget: Optional[float] = None

    @classmethod
    def constant(cls, u, budget=None) -> "ControlPolicy":
        return cls("constant", u=_frozen(u, "u"), budget=budget)

    @classmethod
    def sequence(cls, us, budget=None) -> "ControlPolicy":
        return cls("sequence", us=_frozen(us, "us", ndim=2), budget=budget)

    def schedule(self, n: int, horizon: int) -> np.ndarray:
        if self.kind == "none":
            return np.zeros((horizon, n))
        if self.kind == "constant":
            if self.u.shape[0] != n:
                raise DimensionError("control length does not match community count")
            return np.tile(self.u, (horizon, 1))
        if self.kind == "sequence":
            if self.us.shape[1] != n:
                raise DimensionError("control length does not match community count")
            if self.us.shape[0] < horizon:
                raise PreconditionError(
                    f"control sequence has {self.us.shape[0]} entries, horizon needs {horizon}")
            return np.ascontiguousarray(self.us[:horizon])
        raise PreconditionError(f"unknown policy kind {self.kind!r}")


def check_control(u: np.ndarray, prejudice: np.ndarray, budget: Optional[float] = None,
                  step: Optional[int] = None, tol: float = BOUND_TOL) -> None:
    """Raise :class:`InfeasibleControlError` unless ``u`` is admissible."""
    where = "" if step is None else f" at step {step}"
    if not np.all(np.isfinite(u)):
        raise InfeasibleControlError(f"control is not finite{where}", step)
    if np.any(u < -tol):
        raise InfeasibleControlError(f"control has negative entries{where}", step)
    if np.any(prejudice + u > 1 + tol):
        raise InfeasibleControlError(f"control exceeds 1 - x0 cap{where}", step)
    if budget is not None and u.sum() > budget + tol:
        raise InfeasibleControlError(f"control sum {u.sum():.6g} exceeds budget {budget:g}{where}", step)


def _assert_bounds(A, D, X) -> None:
    lo, hi = -BOUND_TOL, 1 + BOUND_TOL
    assert A.min() >= lo and D.min() >= lo and X.min() >= lo, "state left [0,1]"
    assert A.max() <= hi and D.max() <= hi and X.max() <= hi, "state left [0,1]"
    assert (A + D).max() <= hi, "a + d exceeded 1"


def step(state: SystemState, scenario: Scenario, u=None) -> SystemState:
    """Advance one step of the coupled map; ``u`` nudges the opinion anchor."""
    n = scenario.n
    if state.n != n:
        raise DimensionError("state does not match scenario size")
    if u is None:
        U = np.zeros((1, n))
    else:
        uu = np.asarray(u, dtype=np.float64)
        if uu.shape != (n,):
            raise DimensionError(f"control must have shape ({n},)")
        check_control(uu, scenario.params.prejudice)
        U = uu.reshape(1, n).copy()
    A, D, X = kernels.rollout(*scenario.packed, np.ascontiguousarray(state.a),
                              np.ascontiguousarray(state.d), np.ascontiguousarray(state.x), U, 1)
    if __debug__:
        _assert_bounds(A[1:], D[1:], X[1:])
    return SystemState(A[1], D[1], X[1], state.time + 1)


@dataclass
class Trajectory:
    """States ``0..T`` stored column-wise; ``controls[t]`` produced state ``t+1``."""

    a: np.ndarray
    d: np.ndarray
    x: np.ndarray
    controls: Optional[np.ndarray] = None
    t0: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def horizon(self) -> int:
        return self.a.shape[0] - 1

    @property
    def s(self) -> np.ndarray:
        return 1.0 - self.a - self.d

    def __len__(self) -> int:
        return self.a.shape[0]

    def __getitem__(self, t: int) -> SystemState:
        t = range(len(self))[t]
        return SystemState(self.a[t], self.d[t], self.x[t], self.t0 + t)

    @property
    def states(self) -> list[SystemState]:
        return [self[t] for t in range(len(self))]

    @property
    def final(self) -> SystemState:
        return self[len(self) - 1]

    def control_matrix(self) -> np.ndarray:
        """Controls as a (T, n) array, zeros when the run was uncontrolled."""
        if self.controls is None:
            return np.zeros((self.horizon, self.n))
        return self.controls


def rollout(scenario: Scenario, state: SystemState, U: np.ndarray) -> Trajectory:
    """Apply an explicit (T, n) control schedule without feasibility checks."""
    U = np.ascontiguousarray(U, dtype=np.float64)
    A, D, X = kernels.rollout(*scenario.packed, np.ascontiguousarray(state.a),
                              np.ascontiguousarray(state.d), np.ascontiguousarray(state.x),
                              U, U.shape[0])
    return Trajectory(A, D, X, U, state.time)


def simulate(scenario: Scenario, horizon: int, policy: Optional[ControlPolicy] = None,
             initial: Optional[SystemState] = None) -> Trajectory:
    """Run ``horizon`` steps from ``scenario.initial`` (or ``initial``)."""
    if horizon < 0:
        raise PreconditionError("horizon must be nonnegative")
    n = scenario.n
    policy = policy or ControlPolicy()
    U = policy.schedule(n, horizon)
    if policy.kind != "none":
        for t in range(horizon):
            check_control(U[t], scenario.params.prejudice, policy.budget, step=t)
    start = scenario.initial if initial is None else initial
    traj = rollout(scenario, start, U)
    if __debug__:
        _assert_bounds(traj.a, traj.d, traj.x)
    if policy.kind == "none":
        traj.controls = None
    return traj


def aggregate_adoption(traj: Trajectory) -> np.ndarray:
    """Community means per step as a (T+1, 3) array of (s, a, d)."""
    if len(traj) == 0:
        raise PreconditionError("trajectory is empty")
    a = traj.a.mean(axis=1)
    d = traj.d.mean(axis=1)
    return np.column_stack([traj.s.mean(axis=1), a, d])
