"""Equilibria, reproduction numbers and stability certificates.

The adoption-free equilibrium is ``(0, psi(x*) 1, x*)`` with ``x*`` the fixed
point of the adoption-free opinion recursion.  Its stability is decided by the
opinion-dependent reproduction number

    R0(x) = rho(I - D + B diag(x) (I - psi(x)) W)

evaluated at the lower and upper opinion bounds.  Adoption-diffused equilibria
are located numerically and checked against a two-variable feasibility
certificate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import NonConvergenceError, PreconditionError
from .model import Scenario, SystemState, step, validate_scenario

CERT_MARGIN = 1e-12
EQ_TOL = 1e-10
MAX_FIXED_POINT_ITERS = 1_000_000
OMEGA_MIN = 1.0 / 64
DIFFUSED_FLOOR = 1e-6


class Kind(str, enum.Enum):
    ADOPTION_FREE = "AdoptionFree"
    ADOPTION_DIFFUSED = "AdoptionDiffused"


class Certificate(str, enum.Enum):
    GLOBALLY_STABLE = "GloballyStable"
    UNSTABLE = "Unstable"
    LOCAL_STABLE = "LocalStable"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class ReproductionNumbers:
    r0_at_free: float
    r0_min: float
    r0_max: float
    x_lower: np.ndarray
    x_upper: np.ndarray


@dataclass
class EquilibriumReport:
    """Equilibrium point with its residual and stability verdict.

    ``constants`` holds whichever certificate quantities were computed
    (``nu``, ``phi``, ``eta``, ``b_star`` diagonal, ``rho_b_star``) and
    ``witness`` the pair ``(s1, s2)`` when the feasibility check succeeds.
    """

    kind: Kind
    point: SystemState
    residual: float
    certificate: Certificate = Certificate.INCONCLUSIVE
    r0: Optional[ReproductionNumbers] = None
    constants: dict = field(default_factory=dict)
    witness: Optional[tuple[float, float]] = None
    reasons: list[str] = field(default_factory=list)
    iterations: int = 0

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind.value,
            "point": {"a": self.point.a.tolist(), "d": self.point.d.tolist(),
                      "x": self.point.x.tolist()},
            "residual": self.residual,
            "certificate": self.certificate.value,
            "constants": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                          for k, v in self.constants.items()},
            "witness": None if self.witness is None else list(self.witness),
            "reasons": list(self.reasons),
        }
        if self.r0 is not None:
            out["r0"] = {"r0_at_free": self.r0.r0_at_free, "r0_min": self.r0.r0_min,
                         "r0_max": self.r0.r0_max, "x_lower": self.r0.x_lower.tolist(),
                         "x_upper": self.r0.x_upper.tolist()}
        return out


def spectral_radius(M, rtol: float = 1e-13, max_iter: int = 20_000) -> float:
    """Perron root of a nonnegative matrix.

    Power iteration from the all-ones vector.  For a positive iterate ``v`` the
    Collatz-Wielandt ratios satisfy ``min(Mv/v) <= rho <= max(Mv/v)``, so the
    loop stops once that bracket is narrower than ``rtol`` relative.  Reducible
    or periodic inputs that never close the bracket fall back to a dense
    eigenvalue solve.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise PreconditionError("spectral_radius needs a square matrix")
    if np.any(M < 0):
        raise PreconditionError("spectral_radius needs a nonnegative matrix")
    n = M.shape[0]
    if n == 1:
        return float(M[0, 0])
    v = np.ones(n)
    for _ in range(max_iter):
        w = M @ v
        if not np.all(w > 0):
            break
        ratio = w / v
        lo, hi = ratio.min(), ratio.max()
        if hi - lo <= rtol * hi:
            return float(0.5 * (lo + hi))
        v = w / w.max()
    try:
        return float(np.max(np.abs(np.linalg.eigvals(M))))
    except np.linalg.LinAlgError as exc:
        raise NonConvergenceError(f"spectral radius did not converge: {exc}") from exc


def psi(x, params) -> np.ndarray:
    """Diagonal of psi(x): dissatisfied share of a community with no adopters.

    ``theta_j (1 - x_j) / ((gamma_j - theta_j) x_j + theta_j)``, defined as 0
    where ``theta_j = 0``.
    """
    x = np.asarray(x, dtype=np.float64)
    g, th = params.gamma, params.theta
    den = (g - th) * x + th
    out = np.zeros_like(x)
    pos = th > 0
    out[pos] = th[pos] * (1.0 - x[pos]) / den[pos]
    return out


def free_opinion_fixed_point(scenario: Scenario, check_tol: float = 1e-12) -> np.ndarray:
    """Solve ``x = alpha * x0 + diag(lam) Wt x`` for the adoption-free opinions."""
    p = scenario.params
    n = scenario.n
    M = np.eye(n) - p.lam[:, None] * scenario.social.weights
    rhs = p.alpha * p.prejudice
    try:
        x = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise PreconditionError(
            "I - diag(lambda) Wt is singular; run validate_scenario (no stubborn node reachable?)"
        ) from exc
    resid = np.max(np.abs(M @ x - rhs)) if n else 0.0
    if not np.isfinite(resid) or resid > check_tol:
        raise PreconditionError(
            f"opinion fixed point residual {resid:.3g} too large; run validate_scenario")
    return x


def _one_step_residual(point: SystemState, scenario: Scenario) -> float:
    nxt = step(point, scenario)
    return float(max(np.max(np.abs(nxt.a - point.a)), np.max(np.abs(nxt.d - point.d)),
                     np.max(np.abs(nxt.x - point.x))))


def adoption_free_equilibrium(scenario: Scenario) -> EquilibriumReport:
    xs = free_opinion_fixed_point(scenario)
    # Rounding can push the solve a few ulps outside [0,1]
    xs = np.clip(xs, 0.0, 1.0)
    point = SystemState(np.zeros(scenario.n), psi(xs, scenario.params), xs)
    return EquilibriumReport(Kind.ADOPTION_FREE, point, _one_step_residual(point, scenario))


def opinion_bounds(scenario: Scenario, tol: float = 1e-12, max_iter: int = 1_000_000):
    """Componentwise bounds on x(t) valid for every t of the uncontrolled run.

    Iterates the opinion map with the adoption feedback at its extremes
    (a = 0 for the lower sequence, a = 1 for the upper one) from the initial
    opinions and keeps the running min / max.  The exact limits of both
    sequences are folded in, so the bounds cover the whole infinite tail.
    """
    p = scenario.params
    Wt = scenario.social.weights
    base = p.alpha * p.prejudice
    lift = p.xi * scenario.physical.weights.sum(axis=1)
    lo = hi = np.asarray(scenario.initial.x, dtype=np.float64)
    x_lo, x_hi = lo.copy(), hi.copy()
    for _ in range(max_iter):
        lo_n = base + p.lam * (Wt @ lo)
        hi_n = base + p.lam * (Wt @ hi) + lift
        np.minimum(x_lo, lo_n, out=x_lo)
        np.maximum(x_hi, hi_n, out=x_hi)
        done = max(np.max(np.abs(lo_n - lo)), np.max(np.abs(hi_n - hi))) <= tol
        lo, hi = lo_n, hi_n
        if done:
            break
    M = np.eye(scenario.n) - p.lam[:, None] * Wt
    try:
        lim_lo = np.linalg.solve(M, base)
        lim_hi = np.linalg.solve(M, base + lift)
        np.minimum(x_lo, lim_lo, out=x_lo)
        np.maximum(x_hi, lim_hi, out=x_hi)
    except np.linalg.LinAlgError:
        pass
    return np.clip(x_lo, 0.0, 1.0), np.clip(x_hi, 0.0, 1.0)


def r0_matrix(x, scenario: Scenario) -> np.ndarray:
    p = scenario.params
    x = np.asarray(x, dtype=np.float64)
    gain = p.beta * x * (1.0 - psi(x, p))
    M = gain[:, None] * scenario.physical.weights
    M[np.diag_indices_from(M)] += 1.0 - p.delta
    return M


def r0_at(x, scenario: Scenario) -> float:
    """Opinion-dependent reproduction number ``rho(I - D + B diag(x)(I - psi(x)) W)``."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0) or np.any(x > 1):
        raise PreconditionError("opinions must lie in [0,1]")
    return spectral_radius(r0_matrix(x, scenario))


def r0_extremes(scenario: Scenario) -> ReproductionNumbers:
    x_lo, x_hi = opinion_bounds(scenario)
    xs = np.clip(free_opinion_fixed_point(scenario), 0.0, 1.0)
    return ReproductionNumbers(r0_at_free=r0_at(xs, scenario), r0_min=r0_at(x_lo, scenario),
                               r0_max=r0_at(x_hi, scenario), x_lower=x_lo, x_upper=x_hi)


def certify_adoption_free(scenario: Scenario) -> EquilibriumReport:
    """Global stability if ``r0_max < 1``, instability if ``r0_min > 1``."""
    report = adoption_free_equilibrium(scenario)
    r0 = r0_extremes(scenario)
    report.r0 = r0
    if r0.r0_max < 1.0 - CERT_MARGIN:
        report.certificate = Certificate.GLOBALLY_STABLE
    elif r0.r0_min > 1.0 + CERT_MARGIN:
        report.certificate = Certificate.UNSTABLE
    else:
        report.certificate = Certificate.INCONCLUSIVE
        report.reasons.append(f"r0_min={r0.r0_min:.6g} <= 1 <= r0_max={r0.r0_max:.6g}")
    return report


def damped_fixed_point(scenario: Scenario, a0, d0, x0, tol: float = EQ_TOL,
                       max_iter: int = MAX_FIXED_POINT_ITERS):
    """Run the damped fixed-point kernel; raises on nonconvergence."""
    a, d, x, res, iters, omega, ok = kernels.fixed_point(
        *scenario.packed, np.ascontiguousarray(a0, dtype=np.float64),
        np.ascontiguousarray(d0, dtype=np.float64), np.ascontiguousarray(x0, dtype=np.float64),
        float(tol), int(max_iter), OMEGA_MIN)
    if not ok:
        raise NonConvergenceError(
            f"fixed-point iteration did not reach {tol:g} in {max_iter} iterations "
            f"(last residual {res:.3g}, damping {omega:g})", last_residual=float(res))
    return SystemState(a, d, x), float(res), int(iters)


def find_diffused_equilibrium(scenario: Scenario, seed: float = 0.01, tol: float = EQ_TOL,
                              max_iter: int = MAX_FIXED_POINT_ITERS,
                              r0: Optional[ReproductionNumbers] = None) -> EquilibriumReport:
    """Locate an equilibrium reached from a small uniform adopter seed.

    Starts at ``a = seed``, ``d = 0``, ``x = prejudice``.  The result is
    labelled adoption-diffused when every ``a*_j`` exceeds ``DIFFUSED_FLOOR``.
    """
    if not 0 < seed <= 0.1:
        raise PreconditionError("seed must lie in (0, 0.1]")
    n = scenario.n
    point, res, iters = damped_fixed_point(scenario, np.full(n, seed), np.zeros(n),
                                           scenario.params.prejudice, tol, max_iter)
    kind = Kind.ADOPTION_DIFFUSED if np.all(point.a > DIFFUSED_FLOOR) else Kind.ADOPTION_FREE
    report = EquilibriumReport(kind, point, res, iterations=iters)
    report.r0 = r0 if r0 is not None else r0_extremes(scenario)
    if report.r0.r0_min > 1.0 + CERT_MARGIN and kind is not Kind.ADOPTION_DIFFUSED:
        report.reasons.append("r0_min > 1 but the iteration did not reach a positive a*")
    return report


def default_eta(scenario: Scenario) -> float:
    """Infinity-norm contraction factor of the opinion recursion, max_j lambda_j."""
    return float(np.max(scenario.params.lam))


def sigma_system(nu: float, phi: float, rho_b: float, eta: float):
    """Witness ``(s1, s2) > 0`` for the two sigma inequalities, or ``None``.

        nu^2 + s2 nu^2/(1-eta^2) + s1 phi^2/(1-phi^2) < s1
        rho^2 + s1 rho^2/(1-phi^2) + s2 eta^2/(1-eta^2) < s2

    Written as ``M s > c`` with ``c = (nu^2, rho^2) >= 0``.  Because ``c`` is
    nonnegative the system is feasible iff some ``s > 0`` has ``M s > 0``
    (then scale up), and by homogeneity ``s = (1, t)`` suffices: each row
    confines ``t`` to a half-line, so feasibility is an interval test.  No sign
    is assumed for the coefficients; ``phi`` and ``eta`` must differ from 1.
    """
    kp = 1.0 / (1.0 - phi * phi)
    ke = 1.0 / (1.0 - eta * eta)
    A1, b1, c1 = 1.0 - phi * phi * kp, nu * nu * ke, nu * nu
    A2, b2, c2 = 1.0 - eta * eta * ke, rho_b * rho_b * kp, rho_b * rho_b
    lo, hi = 0.0, np.inf
    # row 1: A1 - b1 t > 0
    if b1 > 0:
        hi = min(hi, A1 / b1)
    elif b1 < 0:
        lo = max(lo, A1 / b1)
    elif A1 <= 0:
        return None
    # row 2: A2 t - b2 > 0
    if A2 > 0:
        lo = max(lo, b2 / A2)
    elif A2 < 0:
        hi = min(hi, b2 / A2)
    elif b2 >= 0:
        return None
    if not lo < hi:
        return None
    t = 0.5 * (lo + hi) if np.isfinite(hi) else max(2.0 * lo, 1.0)
    m1, m2 = A1 - b1 * t, A2 * t - b2
    if not (m1 > 0 and m2 > 0):
        return None
    k = 2.0 * max(c1 / m1, c2 / m2) + 1.0
    s1, s2 = k, k * t
    ok1 = nu * nu + s2 * nu * nu * ke + s1 * phi * phi * kp < s1
    ok2 = rho_b * rho_b + s1 * rho_b * rho_b * kp + s2 * eta * eta * ke < s2
    return (float(s1), float(s2)) if ok1 and ok2 else None


def sigma_feasibility(nu: float, phi: float, rho_b: float, eta: float):
    """Sigma conditions of the diffused-equilibrium certificate.

    The bound behind them needs both contraction factors below one, so
    ``phi >= 1`` or ``eta >= 1`` is reported as a reason instead of being
    solved.  Returns ``(witness, reason)`` with exactly one of them ``None``.
    """
    if phi >= 1.0:
        return None, "contraction factor >= 1 (phi)"
    if eta >= 1.0:
        return None, "contraction factor >= 1 (eta)"
    witness = sigma_system(nu, phi, rho_b, eta)
    if witness is None:
        return None, "sigma conditions infeasible"
    return witness, None


def certify_diffused(report: EquilibriumReport, scenario: Scenario,
                     eta: Optional[float] = None) -> EquilibriumReport:
    """Local stability certificate for an adoption-diffused equilibrium.

    Returns a new report whose certificate is ``LocalStable`` with a witness
    when every condition holds and ``Inconclusive`` (with reasons) otherwise.
    """
    p = scenario.params
    W = scenario.physical.weights
    pt = report.point
    eta = default_eta(scenario) if eta is None else float(eta)
    r0 = report.r0 if report.r0 is not None else r0_extremes(scenario)
    b_star = p.beta * pt.x * (W @ pt.a)
    rho_b = float(np.max(np.abs(b_star)))
    nu = float(np.max(p.theta * (1.0 - r0.x_lower) - p.delta))
    # Row sums of the maximised matrix; the box maximum sits at x = 1, a = d = 0.
    phi = float(np.max(np.abs(1.0 - p.delta - b_star) + p.beta * W.sum(axis=1)))
    out = EquilibriumReport(report.kind, pt, report.residual, Certificate.INCONCLUSIVE, r0,
                            {"nu": nu, "phi": phi, "eta": eta, "b_star": b_star,
                             "rho_b_star": rho_b},
                            iterations=report.iterations)
    reasons = out.reasons
    if report.kind is not Kind.ADOPTION_DIFFUSED:
        reasons.append("point is not adoption-diffused")
    if not r0.r0_min > 1.0 + CERT_MARGIN:
        reasons.append(f"r0_min={r0.r0_min:.6g} is not > 1")
    lhs = p.beta * W.sum(axis=1)
    bad = np.flatnonzero(lhs > p.delta + b_star)
    if bad.size:
        reasons.append(f"beta_j sum_k W_jk <= delta_j + B*_jj fails at communities {bad.tolist()}")
    witness, why = sigma_feasibility(nu, phi, rho_b, eta)
    if why is not None:
        reasons.append(why)
    out.witness = witness
    if not reasons:
        out.certificate = Certificate.LOCAL_STABLE
    return out


def equilibrium_residual(point: SystemState, scenario: Scenario) -> float:
    return _one_step_residual(point, scenario)


def analyze(scenario: Scenario, eta: Optional[float] = None, seed: float = 0.01) -> dict:
    """Adoption-free certificate plus, when it is unstable, the diffused one."""
    report = validate_scenario(scenario)
    if not report.ok:
        raise PreconditionError("; ".join(report.violations))
    free = certify_adoption_free(scenario)
    out = {"adoption_free": free}
    if free.certificate is Certificate.UNSTABLE:
        diffused = find_diffused_equilibrium(scenario, seed, r0=free.r0)
        out["diffused"] = certify_diffused(diffused, scenario, eta)
    return out


__all__ = [
    "Kind", "Certificate", "ReproductionNumbers", "EquilibriumReport", "spectral_radius", "psi",
    "free_opinion_fixed_point", "adoption_free_equilibrium", "opinion_bounds", "r0_matrix",
    "r0_at", "r0_extremes", "certify_adoption_free", "damped_fixed_point",
    "find_diffused_equilibrium", "default_eta", "sigma_feasibility", "certify_diffused",
    "equilibrium_residual", "analyze",
]
