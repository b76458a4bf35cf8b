"""Pure numpy implementation of the hot kernels.

Mirrors ``_ckernels.pyx`` operation for operation; only the summation order
inside matrix-vector products may differ (BLAS vs. a plain loop).

Parameter pack order everywhere: ``W, Wt, beta, gamma, theta, delta, lam, xi,
alpha, prej``.
"""

import numpy as np

BACKEND = "python"


def _step(W, Wt, beta, gamma, theta, delta, lam, xi, alpha, prej, a, d, x, u):
    s = 1.0 - a - d
    wa = W @ a
    wx = Wt @ x
    a_n = a + beta * x * s * wa - delta * a
    d_n = d - gamma * x * d + delta * a + theta * (1.0 - x) * s
    x_n = alpha * (prej + u) + lam * wx + xi * wa
    return a_n, d_n, x_n


def rollout(W, Wt, beta, gamma, theta, delta, lam, xi, alpha, prej, a0, d0, x0, U, T):
    """Apply the step map ``T`` times; ``U`` has shape (T, n)."""
    n = a0.shape[0]
    A = np.empty((T + 1, n))
    D = np.empty((T + 1, n))
    X = np.empty((T + 1, n))
    A[0], D[0], X[0] = a0, d0, x0
    a, d, x = A[0], D[0], X[0]
    for t in range(T):
        a, d, x = _step(W, Wt, beta, gamma, theta, delta, lam, xi, alpha, prej, a, d, x, U[t])
        A[t + 1], D[t + 1], X[t + 1] = a, d, x
    return A, D, X


def fixed_point(W, Wt, beta, gamma, theta, delta, lam, xi, alpha, prej, a0, d0, x0,
                tol, max_iter, omega_min):
    """Damped iteration ``z <- (1 - w) z + w step(z)``.

    ``w`` starts at 1 and halves (down to ``omega_min``) whenever the residual
    grows on two consecutive iterations.  Returns
    ``(a, d, x, residual, iterations, omega, converged)``.
    """
    a, d, x = a0.copy(), d0.copy(), x0.copy()
    zero = np.zeros_like(a)
    omega = 1.0
    prev = np.inf
    rises = 0
    res = np.inf
    for it in range(max_iter + 1):
        a_n, d_n, x_n = _step(W, Wt, beta, gamma, theta, delta, lam, xi, alpha, prej, a, d, x, zero)
        res = max(np.max(np.abs(a_n - a)), np.max(np.abs(d_n - d)), np.max(np.abs(x_n - x)))
        if res <= tol:
            return a, d, x, res, it, omega, True
        if it == max_iter:
            break
        if res > prev:
            rises += 1
            if rises >= 2:
                omega = max(0.5 * omega, omega_min)
                rises = 0
        else:
            rises = 0
        prev = res
        if omega == 1.0:
            a, d, x = a_n, d_n, x_n
        else:
            a = (1.0 - omega) * a + omega * a_n
            d = (1.0 - omega) * d + omega * d_n
            x = (1.0 - omega) * x + omega * x_n
    return a, d, x, res, max_iter, omega, False


def horizon_cost_grad(W, Wt, beta, gamma, theta, delta, lam, xi, alpha, prej, a0, d0, x0,
                      U, qa, qd, l, tw, target, has_target, want_grad):
    """Finite-horizon cost and its adjoint gradient with respect to ``U``.

    Stage cost ``sum_j -qa a^2 + qd d^2 + l u^2`` for k = 0..N-1, plus
    ``tw * ||z_N - target||^2`` when ``has_target``.  ``target`` has shape
    (3, n) holding (a, d, x).
    """
    N = U.shape[0]
    A, D, X = rollout(W, Wt, beta, gamma, theta, delta, lam, xi, alpha, prej, a0, d0, x0, U, N)
    cost = float(np.sum(-qa * A[:N] ** 2 + qd * D[:N] ** 2 + l * U ** 2))
    if has_target:
        ea = A[N] - target[0]
        ed = D[N] - target[1]
        ex = X[N] - target[2]
        cost += tw * float(np.sum(ea * ea) + np.sum(ed * ed) + np.sum(ex * ex))
    if not want_grad:
        return cost, None

    grad = np.empty_like(U)
    if has_target:
        la, ld, lx = 2.0 * tw * ea, 2.0 * tw * ed, 2.0 * tw * ex
    else:
        la = np.zeros_like(a0)
        ld = np.zeros_like(a0)
        lx = np.zeros_like(a0)
    WT = W.T
    WtT = Wt.T
    for k in range(N - 1, -1, -1):
        grad[k] = 2.0 * l * U[k] + alpha * lx
        a, d, x = A[k], D[k], X[k]
        s = 1.0 - a - d
        p = W @ a
        bx = beta * x
        la_n = (-2.0 * qa * a + (1.0 - delta - bx * p) * la + WT @ (bx * s * la)
                + (delta - theta * (1.0 - x)) * ld + WT @ (xi * lx))
        ld_n = 2.0 * qd * d - bx * p * la + (1.0 - gamma * x - theta * (1.0 - x)) * ld
        lx_n = beta * s * p * la + (-gamma * d - theta * s) * ld + WtT @ (lam * lx)
        la, ld, lx = la_n, ld_n, lx_n
    return cost, grad


def project_rows(V, upper, C):
    """Project each row of ``V`` onto ``{0 <= u <= upper, sum(u) <= C}``.

    Bisection on the budget multiplier ``tau`` of ``clip(v - tau, 0, upper)``,
    carried out for all rows at once.  The feasible end of the final bracket
    is returned, so row sums never exceed ``C``.
    """
    out = np.clip(V, 0.0, upper)
    over = out.sum(axis=1) > C
    if not over.any():
        return out
    Vo = V[over]
    lo = np.zeros(Vo.shape[0])
    hi = np.max(Vo, axis=1)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        moved = (mid > lo) & (mid < hi)
        if not moved.any():
            break
        big = np.clip(Vo - mid[:, None], 0.0, upper).sum(axis=1) > C
        lo = np.where(moved & big, mid, lo)
        hi = np.where(moved & ~big, mid, hi)
    out[over] = np.clip(Vo - hi[:, None], 0.0, upper)
    return out
