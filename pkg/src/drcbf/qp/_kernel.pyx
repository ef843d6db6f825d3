# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled primal-dual interior-point kernel.

Same iteration as ``_kernel_py.ipm``; dense LU with partial pivoting on the
reduced (n+p) Newton system, factored once per iteration and reused for the
predictor and corrector solves.
"""
import numpy as np

from libc.math cimport fabs, isfinite, INFINITY

cdef int STALL_ITERS = 10
cdef double PRIMAL_INFEAS = 1e-6
cdef double BIG = 1e10
cdef double CERT_TOL = 1e-6

cdef enum:
    OPTIMAL = 0
    INFEASIBLE = 1
    UNBOUNDED = 2
    MAX_ITER = 3


cdef int _lu_factor(double[:, ::1] M, int[::1] piv, int N) noexcept nogil:
    cdef int i, j, k, p
    cdef double big, tmp, f
    for k in range(N):
        p = k
        big = fabs(M[k, k])
        for i in range(k + 1, N):
            if fabs(M[i, k]) > big:
                big = fabs(M[i, k])
                p = i
        piv[k] = p
        if big == 0.0 or not isfinite(big):
            return 1
        if p != k:
            for j in range(N):
                tmp = M[k, j]
                M[k, j] = M[p, j]
                M[p, j] = tmp
        for i in range(k + 1, N):
            f = M[i, k] / M[k, k]
            M[i, k] = f
            if f != 0.0:
                for j in range(k + 1, N):
                    M[i, j] -= f * M[k, j]
    return 0


cdef void _lu_solve(double[:, ::1] M, int[::1] piv, double[::1] x, int N) noexcept nogil:
    cdef int i, j, k
    cdef double tmp
    for k in range(N):
        if piv[k] != k:
            tmp = x[k]
            x[k] = x[piv[k]]
            x[piv[k]] = tmp
    for i in range(N):
        for j in range(i):
            x[i] -= M[i, j] * x[j]
    for i in range(N - 1, -1, -1):
        for j in range(i + 1, N):
            x[i] -= M[i, j] * x[j]
        x[i] /= M[i, i]


cdef double _max_step(double[::1] v, double[::1] dv, int r) noexcept nogil:
    cdef double a = INFINITY
    cdef int i
    for i in range(r):
        if dv[i] < 0.0 and -v[i] / dv[i] < a:
            a = -v[i] / dv[i]
    return a


cdef void _newton(double[:, ::1] LU, int[::1] piv,
                  int[::1] gptr, int[::1] gcol, double[::1] gval,
                  double[::1] d, double[::1] s, double[::1] lam,
                  double[::1] r_d, double[::1] r_e, double[::1] r_i, double[::1] r_c,
                  double[::1] work, double[::1] tmp_r,
                  double[::1] dz, double[::1] dnu, double[::1] dlam, double[::1] ds,
                  int n, int p, int r) noexcept nogil:
    cdef int i, j, t
    cdef double acc
    for j in range(n):
        work[j] = -r_d[j]
    for i in range(r):
        tmp_r[i] = d[i] * r_i[i] - r_c[i] / s[i]
        for t in range(gptr[i], gptr[i + 1]):
            work[gcol[t]] -= gval[t] * tmp_r[i]
    for j in range(p):
        work[n + j] = -r_e[j]
    _lu_solve(LU, piv, work, n + p)
    for j in range(n):
        dz[j] = work[j]
    for j in range(p):
        dnu[j] = work[n + j]
    for i in range(r):
        acc = r_i[i] - r_c[i] / lam[i]
        for t in range(gptr[i], gptr[i + 1]):
            acc += gval[t] * dz[gcol[t]]
        dlam[i] = d[i] * acc
        ds[i] = (-r_c[i] - s[i] * dlam[i]) / lam[i]


cdef bint _farkas(const double[:, ::1] G, const double[::1] h, const double[:, ::1] A, const double[::1] b,
                  double[::1] lam, double[::1] nu, int n, int p, int r) noexcept nogil:
    # (λ, ν) scaled by max λ certifies primal infeasibility
    cdef double norm = 0.0, acc, resid = 0.0, obj = 0.0
    cdef int i, j
    for i in range(r):
        if lam[i] > norm:
            norm = lam[i]
    if not norm > 0.0:
        return False
    for j in range(n):
        acc = 0.0
        for i in range(r):
            acc += G[i, j] * lam[i]
        for i in range(p):
            acc += A[i, j] * nu[i]
        if fabs(acc) > resid:
            resid = fabs(acc)
    for i in range(r):
        obj += h[i] * lam[i]
    for i in range(p):
        obj += b[i] * nu[i]
    return resid / norm <= CERT_TOL and obj / norm < -CERT_TOL


def ipm(P_in, q_in, A_in, b_in, G_in, h_in, double tol, int max_iter, double floor=1.0):
    """Mehrotra predictor-corrector on min ½zᵀPz+qᵀz s.t. Az=b, Gz<=h.

    ``floor`` is the smallest objective/gradient scale the dual and gap
    tolerances are taken relative to. Returns ``(z, nu, lam, s, iterations, status)``.
    """
    cdef const double[:, ::1] P = np.ascontiguousarray(P_in, dtype=np.float64)
    cdef const double[::1] q = np.ascontiguousarray(q_in, dtype=np.float64)
    cdef const double[:, ::1] A = np.ascontiguousarray(A_in, dtype=np.float64).reshape(b_in.shape[0], q_in.shape[0])
    cdef const double[::1] b = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef const double[:, ::1] G = np.ascontiguousarray(G_in, dtype=np.float64).reshape(h_in.shape[0], q_in.shape[0])
    cdef const double[::1] h = np.ascontiguousarray(h_in, dtype=np.float64)
    cdef int n = q.shape[0]
    cdef int p = b.shape[0]
    cdef int r = h.shape[0]
    cdef int N = n + p
    cdef int i, j, k, it, status
    cdef double scale, scale_d, scale_p, acc, gap, comp, res_p, res_d, merit, best, mu, mu_aff, sigma
    cdef double a_aff, step, shift, zmax, lmax
    cdef int stall, t, t2

    z_arr = np.zeros(n)
    nu_arr = np.zeros(p)
    lam_arr = np.zeros(r)
    s_arr = np.zeros(r)
    cdef double[::1] z = z_arr
    cdef double[::1] nu = nu_arr
    cdef double[::1] lam = lam_arr
    cdef double[::1] s = s_arr

    cdef double[:, ::1] K0
    cdef int[::1] piv0
    cdef double[::1] sol0

    if r == 0:
        K0 = np.zeros((N, N))
        piv0 = np.zeros(N, dtype=np.intc)
        sol0 = np.zeros(N)
        for i in range(n):
            for j in range(n):
                K0[i, j] = P[i, j]
            sol0[i] = -q[i]
        for i in range(p):
            for j in range(n):
                K0[n + i, j] = A[i, j]
                K0[j, n + i] = A[i, j]
            sol0[n + i] = b[i]
        if _lu_factor(K0, piv0, N) != 0:
            return z_arr, nu_arr, lam_arr, s_arr, 0, UNBOUNDED
        _lu_solve(K0, piv0, sol0, N)
        for i in range(n):
            z[i] = sol0[i]
        for i in range(p):
            nu[i] = sol0[n + i]
        for i in range(N):
            if not isfinite(sol0[i]):
                return z_arr, nu_arr, lam_arr, s_arr, 1, UNBOUNDED
        return z_arr, nu_arr, lam_arr, s_arr, 1, OPTIMAL

    # initial point from the KKT system [P A' G'; A 0 0; G 0 -I], with the
    # last block eliminated: [P + G'G, A'; A, 0] [z; nu] = [-q + G'h; b]
    K0 = np.zeros((N, N))
    piv0 = np.zeros(N, dtype=np.intc)
    sol0 = np.zeros(N)
    for i in range(n):
        for j in range(i, n):
            acc = P[i, j]
            for k in range(r):
                acc += G[k, i] * G[k, j]
            K0[i, j] = acc
            K0[j, i] = acc
        acc = -q[i]
        for k in range(r):
            acc += G[k, i] * h[k]
        sol0[i] = acc
    for i in range(p):
        for j in range(n):
            K0[n + i, j] = A[i, j]
            K0[j, n + i] = A[i, j]
        sol0[n + i] = b[i]
    if _lu_factor(K0, piv0, N) == 0:
        _lu_solve(K0, piv0, sol0, N)
        for i in range(N):
            if not isfinite(sol0[i]):
                sol0[:] = 0.0
                break
    else:
        sol0[:] = 0.0
    for i in range(n):
        z[i] = sol0[i]
    for i in range(p):
        nu[i] = sol0[n + i]
    for i in range(r):
        acc = h[i]
        for j in range(n):
            acc -= G[i, j] * z[j]
        s[i] = acc
        lam[i] = -acc
    shift = -INFINITY
    for i in range(r):
        if -s[i] > shift:
            shift = -s[i]
    if shift >= 0.0:
        for i in range(r):
            s[i] += 1.0 + shift
    shift = -INFINITY
    for i in range(r):
        if -lam[i] > shift:
            shift = -lam[i]
    if shift >= 0.0:
        for i in range(r):
            lam[i] += 1.0 + shift

    cdef double[:, ::1] K = np.zeros((N, N))
    cdef int[::1] piv = np.zeros(N, dtype=np.intc)
    cdef double[::1] r_d = np.zeros(n)
    cdef double[::1] r_e = np.zeros(p)
    cdef double[::1] r_i = np.zeros(r)
    cdef double[::1] d = np.zeros(r)
    cdef double[::1] r_c = np.zeros(r)
    cdef double[::1] work = np.zeros(N)
    cdef double[::1] tmp_r = np.zeros(r)
    cdef double[::1] dz_a = np.zeros(n)
    cdef double[::1] dnu_a = np.zeros(p)
    cdef double[::1] dlam_a = np.zeros(r)
    cdef double[::1] ds_a = np.zeros(r)
    cdef double[::1] dz = np.zeros(n)
    cdef double[::1] dnu = np.zeros(p)
    cdef double[::1] dlam = np.zeros(r)
    cdef double[::1] ds = np.zeros(r)

    best = INFINITY
    scale_p = 1.0
    for i in range(r):
        if fabs(h[i]) > scale_p:
            scale_p = fabs(h[i])
    for i in range(p):
        if fabs(b[i]) > scale_p:
            scale_p = fabs(b[i])
    # G is constant across iterations and usually sparse (bounds, LP rows): keep it in CSR form
    nz = np.nonzero(np.asarray(G))
    cdef int[::1] gptr = np.searchsorted(nz[0], np.arange(r + 1)).astype(np.intc)
    cdef int[::1] gcol = nz[1].astype(np.intc)
    cdef double[::1] gval = np.ascontiguousarray(np.asarray(G)[nz])

    stall = 0
    status = MAX_ITER
    with nogil:
        for it in range(max_iter + 1):
            for j in range(n):
                acc = q[j]
                for k in range(n):
                    acc += P[j, k] * z[k]
                for i in range(p):
                    acc += A[i, j] * nu[i]
                r_d[j] = acc
            for i in range(r):
                for t in range(gptr[i], gptr[i + 1]):
                    r_d[gcol[t]] += gval[t] * lam[i]
            res_d = 0.0
            for j in range(n):
                if fabs(r_d[j]) > res_d:
                    res_d = fabs(r_d[j])
            res_p = 0.0
            for i in range(p):
                acc = -b[i]
                for j in range(n):
                    acc += A[i, j] * z[j]
                r_e[i] = acc
                if fabs(acc) > res_p:
                    res_p = fabs(acc)
            gap = 0.0
            comp = 0.0
            for i in range(r):
                acc = s[i] - h[i]
                for t in range(gptr[i], gptr[i + 1]):
                    acc += gval[t] * z[gcol[t]]
                r_i[i] = acc
                if fabs(acc) > res_p:
                    res_p = fabs(acc)
                gap += s[i] * lam[i]
                if fabs(lam[i] * (acc - s[i])) > comp:
                    comp = fabs(lam[i] * (acc - s[i]))
            # residuals are judged relative to the size of the data they balance
            scale = 0.0
            scale_d = floor
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc += P[j, k] * z[k]
                if fabs(acc) > scale_d:
                    scale_d = fabs(acc)
                if fabs(q[j]) > scale_d:
                    scale_d = fabs(q[j])
                scale += (0.5 * acc + q[j]) * z[j]
            scale = fabs(scale)
            if scale < floor:
                scale = floor
            if res_p <= tol * scale_p and res_d <= tol * scale_d and gap <= tol * scale and comp <= tol * scale:
                status = OPTIMAL
                break
            if it == max_iter:
                status = MAX_ITER
                break
            zmax = 0.0
            for j in range(n):
                if fabs(z[j]) > zmax:
                    zmax = fabs(z[j])
            if zmax > BIG:
                status = UNBOUNDED
                break
            merit = res_p
            if res_d > merit:
                merit = res_d
            if gap / r > merit:
                merit = gap / r
            if merit < 0.9 * best:
                best = merit
                stall = 0
            else:
                stall += 1
            lmax = 0.0
            for i in range(r):
                if lam[i] > lmax:
                    lmax = lam[i]
            if (stall >= STALL_ITERS or lmax > BIG) and res_p > PRIMAL_INFEAS \
                    and _farkas(G, h, A, b, lam, nu, n, p, r):
                status = INFEASIBLE
                break

            for j in range(n):
                for k in range(n):
                    K[j, k] = P[j, k]
            for i in range(r):
                d[i] = lam[i] / s[i]
                for t in range(gptr[i], gptr[i + 1]):
                    acc = gval[t] * d[i]
                    for t2 in range(gptr[i], gptr[i + 1]):
                        K[gcol[t], gcol[t2]] += acc * gval[t2]
            for i in range(p):
                for j in range(n):
                    K[n + i, j] = A[i, j]
                    K[j, n + i] = A[i, j]
                for j in range(p):
                    K[n + i, n + j] = 0.0
            if _lu_factor(K, piv, N) != 0:
                # numerical breakdown, not evidence of infeasibility by itself
                status = MAX_ITER
                break

            # predictor
            for i in range(r):
                r_c[i] = s[i] * lam[i]
            _newton(K, piv, gptr, gcol, gval, d, s, lam, r_d, r_e, r_i, r_c, work, tmp_r,
                    dz_a, dnu_a, dlam_a, ds_a, n, p, r)
            a_aff = 1.0
            step = _max_step(s, ds_a, r)
            if step < a_aff:
                a_aff = step
            step = _max_step(lam, dlam_a, r)
            if step < a_aff:
                a_aff = step
            mu = gap / r
            mu_aff = 0.0
            for i in range(r):
                mu_aff += (s[i] + a_aff * ds_a[i]) * (lam[i] + a_aff * dlam_a[i])
            mu_aff /= r
            if mu > 0.0:
                sigma = (mu_aff / mu) * (mu_aff / mu) * (mu_aff / mu)
                if sigma > 1.0:
                    sigma = 1.0
            else:
                sigma = 0.0
            # corrector
            for i in range(r):
                r_c[i] = s[i] * lam[i] + ds_a[i] * dlam_a[i] - sigma * mu
            _newton(K, piv, gptr, gcol, gval, d, s, lam, r_d, r_e, r_i, r_c, work, tmp_r,
                    dz, dnu, dlam, ds, n, p, r)
            step = _max_step(s, ds, r)
            acc = _max_step(lam, dlam, r)
            if acc < step:
                step = acc
            step = 0.99 * step
            if step > 1.0:
                step = 1.0
            for j in range(n):
                z[j] += step * dz[j]
            for i in range(p):
                nu[i] += step * dnu[i]
            for i in range(r):
                lam[i] += step * dlam[i]
                s[i] += step * ds[i]
            acc = 0.0
            for j in range(n):
                acc += z[j]
            for i in range(r):
                acc += lam[i]
            if not isfinite(acc):
                status = MAX_ITER
                break

    if status == MAX_ITER:
        res_p = 0.0
        for i in range(p):
            acc = -b[i]
            for j in range(n):
                acc += A[i, j] * z[j]
            if fabs(acc) > res_p:
                res_p = fabs(acc)
        for i in range(r):
            acc = -h[i]
            for j in range(n):
                acc += G[i, j] * z[j]
            if acc > res_p:
                res_p = acc
        if res_p > PRIMAL_INFEAS and _farkas(G, h, A, b, lam, nu, n, p, r):
            status = INFEASIBLE
    return z_arr, nu_arr, lam_arr, s_arr, it, status
