# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

BACKEND = "cython"


cdef inline void _step(const double[:, ::1] W, const double[:, ::1] Wt,
                       const double[::1] beta, const double[::1] gamma,
                       const double[::1] theta, const double[::1] delta,
                       const double[::1] lam, const double[::1] xi,
                       const double[::1] alpha, const double[::1] prej,
                       const double[::1] a, const double[::1] d, const double[::1] x,
                       const double[::1] u,
                       double[::1] a_n, double[::1] d_n, double[::1] x_n) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t j, k
    cdef double s, wa, wx
    for j in range(n):
        wa = 0.0
        wx = 0.0
        for k in range(n):
            wa = wa + W[j, k] * a[k]
            wx = wx + Wt[j, k] * x[k]
        s = 1.0 - a[j] - d[j]
        a_n[j] = a[j] + beta[j] * x[j] * s * wa - delta[j] * a[j]
        d_n[j] = d[j] - gamma[j] * x[j] * d[j] + delta[j] * a[j] + theta[j] * (1.0 - x[j]) * s
        x_n[j] = alpha[j] * (prej[j] + u[j]) + lam[j] * wx + xi[j] * wa


def rollout(const double[:, ::1] W, const double[:, ::1] Wt,
            const double[::1] beta, const double[::1] gamma,
            const double[::1] theta, const double[::1] delta,
            const double[::1] lam, const double[::1] xi,
            const double[::1] alpha, const double[::1] prej,
            const double[::1] a0, const double[::1] d0, const double[::1] x0,
            const double[:, ::1] U, Py_ssize_t T):
    cdef Py_ssize_t n = a0.shape[0]
    A_arr = np.empty((T + 1, n))
    D_arr = np.empty((T + 1, n))
    X_arr = np.empty((T + 1, n))
    cdef double[:, ::1] A = A_arr
    cdef double[:, ::1] D = D_arr
    cdef double[:, ::1] X = X_arr
    cdef Py_ssize_t t
    A[0, :] = a0
    D[0, :] = d0
    X[0, :] = x0
    with nogil:
        for t in range(T):
            _step(W, Wt, beta, gamma, theta, delta, lam, xi, alpha, prej,
                  A[t], D[t], X[t], U[t], A[t + 1], D[t + 1], X[t + 1])
    return A_arr, D_arr, X_arr


def fixed_point(const double[:, ::1] W, const double[:, ::1] Wt,
                const double[::1] beta, const double[::1] gamma,
                const double[::1] theta, const double[::1] delta,
                const double[::1] lam, const double[::1] xi,
                const double[::1] alpha, const double[::1] prej,
                const double[::1] a0, const double[::1] d0, const double[::1] x0,
                double tol, Py_ssize_t max_iter, double omega_min):
    cdef Py_ssize_t n = a0.shape[0]
    a_arr = np.array(a0, dtype=np.float64)
    d_arr = np.array(d0, dtype=np.float64)
    x_arr = np.array(x0, dtype=np.float64)
    cdef double[::1] a = a_arr
    cdef double[::1] d = d_arr
    cdef double[::1] x = x_arr
    cdef double[::1] a_n = np.empty(n)
    cdef double[::1] d_n = np.empty(n)
    cdef double[::1] x_n = np.empty(n)
    cdef double[::1] zero = np.zeros(n)
    cdef double omega = 1.0
    cdef double prev = np.inf
    cdef double res = np.inf
    cdef int rises = 0
    cdef bint converged = False
    cdef Py_ssize_t it, j, iters = max_iter
    with nogil:
        for it in range(max_iter + 1):
            _step(W, Wt, beta, gamma, theta, delta, lam, xi, alpha, prej,
                  a, d, x, zero, a_n, d_n, x_n)
            res = 0.0
            for j in range(n):
                if fabs(a_n[j] - a[j]) > res:
                    res = fabs(a_n[j] - a[j])
            for j in range(n):
                if fabs(d_n[j] - d[j]) > res:
                    res = fabs(d_n[j] - d[j])
            for j in range(n):
                if fabs(x_n[j] - x[j]) > res:
                    res = fabs(x_n[j] - x[j])
            if res <= tol:
                converged = True
                iters = it
                break
            if it == max_iter:
                break
            if res > prev:
                rises += 1
                if rises >= 2:
                    omega = 0.5 * omega
                    if omega < omega_min:
                        omega = omega_min
                    rises = 0
            else:
                rises = 0
            prev = res
            if omega == 1.0:
                for j in range(n):
                    a[j] = a_n[j]
                    d[j] = d_n[j]
                    x[j] = x_n[j]
            else:
                for j in range(n):
                    a[j] = (1.0 - omega) * a[j] + omega * a_n[j]
                    d[j] = (1.0 - omega) * d[j] + omega * d_n[j]
                    x[j] = (1.0 - omega) * x[j] + omega * x_n[j]
    return a_arr, d_arr, x_arr, res, iters, omega, converged


def horizon_cost_grad(const double[:, ::1] W, const double[:, ::1] Wt,
                      const double[::1] beta, const double[::1] gamma,
                      const double[::1] theta, const double[::1] delta,
                      const double[::1] lam, const double[::1] xi,
                      const double[::1] alpha, const double[::1] prej,
                      const double[::1] a0, const double[::1] d0, const double[::1] x0,
                      const double[:, ::1] U,
                      const double[::1] qa, const double[::1] qd, const double[::1] l,
                      double tw, const double[:, ::1] target, bint has_target, bint want_grad):
    cdef Py_ssize_t N = U.shape[0]
    cdef Py_ssize_t n = a0.shape[0]
    A_arr, D_arr, X_arr = rollout(W, Wt, beta, gamma, theta, delta, lam, xi, alpha, prej,
                                  a0, d0, x0, U, N)
    cdef double[:, ::1] A = A_arr
    cdef double[:, ::1] D = D_arr
    cdef double[:, ::1] X = X_arr
    cdef Py_ssize_t k, j, i
    cdef double cost = 0.0
    cdef double e, s, p, bx
    for k in range(N):
        for j in range(n):
            cost += -qa[j] * A[k, j] * A[k, j] + qd[j] * D[k, j] * D[k, j] + l[j] * U[k, j] * U[k, j]
    cdef double[::1] la = np.zeros(n)
    cdef double[::1] ld = np.zeros(n)
    cdef double[::1] lx = np.zeros(n)
    if has_target:
        for j in range(n):
            e = A[N, j] - target[0, j]
            cost += tw * e * e
            la[j] = 2.0 * tw * e
        for j in range(n):
            e = D[N, j] - target[1, j]
            cost += tw * e * e
            ld[j] = 2.0 * tw * e
        for j in range(n):
            e = X[N, j] - target[2, j]
            cost += tw * e * e
            lx[j] = 2.0 * tw * e
    if not want_grad:
        return cost, None

    grad_arr = np.empty((N, n))
    cdef double[:, ::1] grad = grad_arr
    cdef double[::1] la_n = np.empty(n)
    cdef double[::1] ld_n = np.empty(n)
    cdef double[::1] lx_n = np.empty(n)
    cdef double[::1] ga = np.empty(n)
    cdef double[::1] gx = np.empty(n)
    cdef double[::1] gxt = np.empty(n)
    with nogil:
        for k in range(N - 1, -1, -1):
            for j in range(n):
                grad[k, j] = 2.0 * l[j] * U[k, j] + alpha[j] * lx[j]
            for j in range(n):
                s = 1.0 - A[k, j] - D[k, j]
                ga[j] = beta[j] * X[k, j] * s * la[j]
                gx[j] = xi[j] * lx[j]
                gxt[j] = lam[j] * lx[j]
            for j in range(n):
                p = 0.0
                for i in range(n):
                    p = p + W[j, i] * A[k, i]
                s = 1.0 - A[k, j] - D[k, j]
                bx = beta[j] * X[k, j]
                la_n[j] = (-2.0 * qa[j] * A[k, j] + (1.0 - delta[j] - bx * p) * la[j]
                           + (delta[j] - theta[j] * (1.0 - X[k, j])) * ld[j])
                ld_n[j] = (2.0 * qd[j] * D[k, j] - bx * p * la[j]
                           + (1.0 - gamma[j] * X[k, j] - theta[j] * (1.0 - X[k, j])) * ld[j])
                lx_n[j] = (beta[j] * s * p * la[j] + (-gamma[j] * D[k, j] - theta[j] * s) * ld[j])
            # transposed couplings: column sums weighted by the adjoint terms
            for i in range(n):
                for j in range(n):
                    la_n[j] = la_n[j] + W[i, j] * (ga[i] + gx[i])
                    lx_n[j] = lx_n[j] + Wt[i, j] * gxt[i]
            for j in range(n):
                la[j] = la_n[j]
                ld[j] = ld_n[j]
                lx[j] = lx_n[j]
    return cost, grad_arr


cdef double _clipped_sum(const double[::1] v, const double[::1] upper, double tau) noexcept nogil:
    cdef Py_ssize_t j
    cdef double s = 0.0, w
    for j in range(v.shape[0]):
        w = v[j] - tau
        if w < 0.0:
            w = 0.0
        if w > upper[j]:
            w = upper[j]
        s += w
    return s


def project_rows(const double[:, ::1] V, const double[::1] upper, double C):
    cdef Py_ssize_t m = V.shape[0]
    cdef Py_ssize_t n = V.shape[1]
    out_arr = np.empty((m, n))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, j, it
    cdef double lo, hi, mid, tau, w
    with nogil:
        for r in range(m):
            tau = 0.0
            if _clipped_sum(V[r], upper, 0.0) > C:
                lo = 0.0
                hi = V[r, 0]
                for j in range(1, n):
                    if V[r, j] > hi:
                        hi = V[r, j]
                for it in range(200):
                    mid = 0.5 * (lo + hi)
                    if not (mid > lo and mid < hi):
                        break
                    if _clipped_sum(V[r], upper, mid) > C:
                        lo = mid
                    else:
                        hi = mid
                tau = hi
            for j in range(n):
                w = V[r, j] - tau
                if w < 0.0:
                    w = 0.0
                if w > upper[j]:
                    w = upper[j]
                out[r, j] = w
    return out_arr
