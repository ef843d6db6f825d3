"""Brute-force reference computations used to check the solvers.

None of these call the interior-point solver (except ``transport_lp``, which
checks the closed-form 1-D Wasserstein distance against a generic LP).
They are slow and only meant for small instances.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def cvar_objective(values, alpha, eta):
    """``η + E[(h-η)_+]/(1-α)`` over the empirical distribution, vectorized in η."""
    h = np.asarray(values, dtype=float)
    eta = np.asarray(eta, dtype=float)
    tail = np.maximum(h[None, :] - np.atleast_1d(eta)[:, None], 0.0).mean(axis=1)
    out = np.atleast_1d(eta) + tail / (1.0 - alpha)
    return out if eta.ndim else float(out[0])


def cvar_sorted_tail(values, alpha) -> float:
    """CVaR as the objective evaluated at the order-statistic VaR.

    The objective is convex piecewise linear with kinks at the samples, so its
    minimum sits at the ⌈αN⌉-th order statistic.
    """
    h = np.sort(np.asarray(values, dtype=float))
    idx = max(1, math.ceil(alpha * h.size - 1e-12))
    return float(cvar_objective(h, alpha, h[idx - 1]))


def cvar_grid_scan(values, alpha, step=1e-5) -> float:
    h = np.asarray(values, dtype=float)
    grid = np.arange(h.min() - step, h.max() + 2 * step, step)
    best = math.inf
    for chunk in np.array_split(grid, max(1, grid.size // 2000)):
        best = min(best, float(cvar_objective(h, alpha, chunk).min()))
    return best


def penalized_sup_cvar_objective(h_val, samples, alpha, lam, lower, upper, eta):
    """``η + 1/((1-α)N) Σ_m max_{w∈{w̲,w̄,w^m}} ([h+w-η]_+ - λ|w-w^m|)`` vectorized in η."""
    w = np.asarray(samples, dtype=float)
    eta = np.atleast_1d(np.asarray(eta, dtype=float))[:, None]
    best = None
    for cand in (np.full_like(w, lower), np.full_like(w, upper), w):
        term = np.maximum(h_val + cand[None, :] - eta, 0.0) - lam * np.abs(cand - w)[None, :]
        best = term if best is None else np.maximum(best, term)
    return eta[:, 0] + best.mean(axis=1) / (1.0 - alpha)


def case2_bruteforce(h_val, samples, alpha, lam, lower, upper) -> float:
    """Grid scan in η, then a fine rescan around the coarse minimizer (objective is convex)."""
    w = np.asarray(samples, dtype=float)
    lo = h_val + min(lower, w.min()) - 1.0
    hi = h_val + max(upper, w.max()) + 1.0
    coarse = np.arange(lo, hi, 1e-4)
    vals = penalized_sup_cvar_objective(h_val, w, alpha, lam, lower, upper, coarse)
    center = coarse[np.argmin(vals)]
    fine = np.arange(center - 2e-4, center + 2e-4, 1e-7)
    return float(penalized_sup_cvar_objective(h_val, w, alpha, lam, lower, upper, fine).min())


def lp_vertex_enumeration(c, G, h, tol=1e-9) -> float:
    """min cᵀz over the bounded polytope Gz <= h by enumerating basic feasible solutions."""
    c, G, h = (np.asarray(a, dtype=float) for a in (c, G, h))
    n = c.size
    best = math.inf
    for rows in itertools.combinations(range(G.shape[0]), n):
        B = G[list(rows)]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        z = np.linalg.solve(B, h[list(rows)])
        if np.all(G @ z <= h + tol):
            best = min(best, float(c @ z))
    return best


def qp_active_set_enumeration(Q, q, G, h, tol=1e-9):
    """Exact convex QP (Q positive definite) by trying every active set.

    Returns ``(z, λ)`` for the set whose equality-constrained solution is
    primal and dual feasible.
    """
    Q, q, G, h = (np.asarray(a, dtype=float) for a in (Q, q, G, h))
    n, r = q.size, h.size
    for size in range(0, min(n, r) + 1):
        for rows in itertools.combinations(range(r), size):
            rows = list(rows)
            Ga = G[rows]
            K = np.block([[Q, Ga.T], [Ga, np.zeros((size, size))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-q, h[rows]]))
            except np.linalg.LinAlgError:
                continue
            z, lam_a = sol[:n], sol[n:]
            if np.all(G @ z <= h + tol) and np.all(lam_a >= -tol):
                lam = np.zeros(r)
                lam[rows] = lam_a
                return z, lam
    raise ValueError("no KKT point found")


def box_qp_projected_gradient(Q, q, lower, upper, tol=1e-10, max_iter=200_000):
    """Projected gradient with step 1/L on ``min ½zᵀQz+qᵀz`` over a box."""
    Q, q = np.asarray(Q, dtype=float), np.asarray(q, dtype=float)
    step = 1.0 / np.linalg.eigvalsh(Q).max()
    z = np.clip(np.zeros_like(q), lower, upper)
    for _ in range(max_iter):
        z_new = np.clip(z - step * (Q @ z + q), lower, upper)
        if np.max(np.abs(z_new - z)) / step <= tol:
            return z_new
        z = z_new
    return z


def transport_lp(p, q) -> float:
    """Order-1 optimal transport between equal-weight empirical measures, as an LP."""
    from .qp import QpProblem, solve_lp

    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    n, m = p.size, q.size
    cost = np.abs(p[:, None] - q[None, :]).ravel()
    rows = np.kron(np.eye(n), np.ones((1, m)))
    cols = np.kron(np.ones((1, n)), np.eye(m))
    A = np.vstack([rows, cols[:-1]])     # one marginal constraint is redundant
    b = np.concatenate([np.full(n, 1.0 / n), np.full(m - 1, 1.0 / m)])
    nv = n * m
    prob = QpProblem(np.zeros((nv, nv)), cost, eq_matrix=A, eq_rhs=b, lower=np.zeros(nv))
    sol = solve_lp(prob, tol=1e-10)
    sol.raise_for_status()
    return sol.objective_value


def central_difference(fn, x, step=1e-5):
    """Central finite-difference Jacobian of ``fn`` at ``x`` (columns = input coordinates)."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fn(x))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        J[:, i] = (np.atleast_1d(fn(x + e)) - np.atleast_1d(fn(x - e))) / (2 * step)
    return J
