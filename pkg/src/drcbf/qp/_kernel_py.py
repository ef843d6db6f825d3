"""Pure-numpy primal-dual interior-point kernel.

Mirrors ``_kernel.pyx`` step for step; used when the compiled extension is
unavailable or ``DRCBF_BACKEND=python``.
"""
import numpy as np
from scipy.linalg import lu_factor, lu_solve

OPTIMAL, INFEASIBLE, UNBOUNDED, MAX_ITER = 0, 1, 2, 3

_STALL_ITERS = 10
_PRIMAL_INFEAS = 1e-6
_BIG = 1e10
_CERT_TOL = 1e-6


def _max_step(v, dv):
    neg = dv < 0.0
    if not neg.any():
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _farkas(G, h, A, b, lam, nu):
    """True when (λ, ν) normalized by max λ is a primal-infeasibility certificate."""
    norm = float(np.max(lam))
    if not norm > 0.0:
        return False
    resid = float(np.max(np.abs(G.T @ lam + A.T @ nu))) / norm
    return resid <= _CERT_TOL and float(h @ lam + b @ nu) / norm < -_CERT_TOL


def ipm(P, q, A, b, G, h, tol, max_iter, floor=1.0):
    """Mehrotra predictor-corrector on min ½zᵀPz+qᵀz s.t. Az=b, Gz<=h.

    ``floor`` is the smallest objective/gradient scale the dual and gap
    tolerances are taken relative to. Returns ``(z, nu, lam, s, iterations, status)``.
    """
    n, p, r = q.shape[0], b.shape[0], h.shape[0]
    N = n + p

    if r == 0:
        K = np.zeros((N, N))
        K[:n, :n] = P
        K[:n, n:] = A.T
        K[n:, :n] = A
        rhs = np.concatenate([-q, b])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            return np.zeros(n), np.zeros(p), np.zeros(0), np.zeros(0), 0, UNBOUNDED
        z, nu = sol[:n], sol[n:]
        if np.max(np.abs(K @ sol - rhs), initial=0.0) > 1e-6 * (1.0 + np.max(np.abs(rhs), initial=0.0)):
            return z, nu, np.zeros(0), np.zeros(0), 1, UNBOUNDED
        return z, nu, np.zeros(0), np.zeros(0), 1, OPTIMAL

    # initial point from the KKT system [P A' G'; A 0 0; G 0 -I], with the
    # last block eliminated: [P + G'G, A'; A, 0] [z; nu] = [-q + G'h; b]
    K0 = np.zeros((N, N))
    K0[:n, :n] = P + G.T @ G
    K0[:n, n:] = A.T
    K0[n:, :n] = A
    rhs0 = np.concatenate([-q + G.T @ h, b])
    try:
        sol0 = lu_solve(lu_factor(K0, check_finite=False), rhs0, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        sol0 = np.zeros(N)
    if not np.all(np.isfinite(sol0)):
        sol0 = np.zeros(N)
    z = sol0[:n].copy()
    nu = sol0[n:N].copy()
    s = h - G @ z
    lam = -s.copy()
    shift = -np.min(s)
    if shift >= 0.0:
        s = s + 1.0 + shift
    shift = -np.min(lam)
    if shift >= 0.0:
        lam = lam + 1.0 + shift

    best = np.inf
    stall = 0
    scale_p = max(1.0, float(np.max(np.abs(h))), float(np.max(np.abs(b), initial=0.0)))
    K = np.zeros((N, N))
    K[:n, n:] = A.T
    K[n:, :n] = A
    for it in range(max_iter + 1):
        r_d = P @ z + q + A.T @ nu + G.T @ lam
        r_e = A @ z - b
        r_i = G @ z + s - h
        gap = float(s @ lam)
        comp = float(np.max(np.abs(lam * (r_i - s))))
        res_p = max(float(np.max(np.abs(r_e), initial=0.0)), float(np.max(np.abs(r_i))))
        res_d = float(np.max(np.abs(r_d)))
        # residuals are judged relative to the size of the data they balance
        Pz = P @ z
        scale = max(floor, abs(0.5 * float(z @ Pz) + float(q @ z)))
        scale_d = max(floor, float(np.max(np.abs(q))), float(np.max(np.abs(Pz))))
        if res_p <= tol * scale_p and res_d <= tol * scale_d and gap <= tol * scale and comp <= tol * scale:
            return z, nu, lam, s, it, OPTIMAL
        if it == max_iter:
            break
        if np.max(np.abs(z)) > _BIG:
            return z, nu, lam, s, it, UNBOUNDED
        merit = max(res_p, res_d, gap / r)
        if merit < 0.9 * best:
            best = merit
            stall = 0
        else:
            stall += 1
        # no progress (or exploding duals) while primal infeasible: look for a Farkas certificate
        if (stall >= _STALL_ITERS or np.max(lam) > _BIG) and res_p > _PRIMAL_INFEAS \
                and _farkas(G, h, A, b, lam, nu):
            return z, nu, lam, s, it, INFEASIBLE

        d = lam / s
        K[:n, :n] = P + (G.T * d) @ G
        try:
            lu = lu_factor(K, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            lu = None
        if lu is None or not np.all(np.isfinite(lu[0])):
            # numerical breakdown, not evidence of infeasibility by itself
            return z, nu, lam, s, it, _breakdown_status(G, h, A, b, z, lam, nu)

        def newton(r_c):
            rhs = np.concatenate([-r_d - G.T @ (d * r_i - r_c / s), -r_e])
            sol = lu_solve(lu, rhs, check_finite=False)
            dz = sol[:n]
            dlam = d * (G @ dz + r_i - r_c / lam)
            ds = (-r_c - s * dlam) / lam
            return dz, sol[n:], dlam, ds

        # predictor
        dz_a, dnu_a, dlam_a, ds_a = newton(s * lam)
        a_aff = min(1.0, _max_step(s, ds_a), _max_step(lam, dlam_a))
        mu = gap / r
        mu_aff = float((s + a_aff * ds_a) @ (lam + a_aff * dlam_a)) / r
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0.0 else 0.0
        # corrector
        dz, dnu, dlam, ds = newton(s * lam + ds_a * dlam_a - sigma * mu)
        step = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(lam, dlam)))
        z = z + step * dz
        nu = nu + step * dnu
        lam = lam + step * dlam
        s = s + step * ds
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(lam))):
            return z, nu, lam, s, it, _breakdown_status(G, h, A, b, z, lam, nu)

    return z, nu, lam, s, max_iter, _breakdown_status(G, h, A, b, z, lam, nu)


def _breakdown_status(G, h, A, b, z, lam, nu):
    res_p = max(float(np.max(np.abs(A @ z - b), initial=0.0)),
                float(np.max(np.maximum(G @ z - h, 0.0), initial=0.0)))
    return INFEASIBLE if res_p > _PRIMAL_INFEAS and _farkas(G, h, A, b, lam, nu) else MAX_ITER
