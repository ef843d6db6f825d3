"""Sensitivities of solved QPs/LPs with respect to problem parameters.

Two routes are provided:

* :func:`differentiate_solution` linearizes the KKT conditions at the optimum
  and solves the resulting block system for the full primal/dual Jacobian.
* :func:`value_gradient` uses the envelope theorem: the derivative of the
  optimal value is the parameter-derivative of the Lagrangian at the optimum.
  For right-hand-side parameters this is just a signed sum of duals.

Parameters enter through a :class:`ParamMap`, which stores the derivative of
each problem block with respect to ``k`` scalar parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .qp import QpError, QpProblem, QpSolution, residual_scale, solve_qp

LP_SMOOTHING = 1e-6
STRICT_COMPLEMENTARITY = 1e-7
OPTIMALITY_TOL = 1e-6


class NotOptimalError(QpError):
    pass


class DegenerateKktError(QpError):
    pass


@dataclass(frozen=True)
class ParamMap:
    """Derivatives of the problem data w.r.t. ``k`` parameters.

    Each field holds a stack indexed by parameter first, e.g. ``d_ineq_rhs``
    is ``(k, r)``. ``None`` means the block does not depend on θ.
    """

    k: int
    d_cost_matrix: np.ndarray | None = None
    d_cost_vector: np.ndarray | None = None
    d_eq_matrix: np.ndarray | None = None
    d_eq_rhs: np.ndarray | None = None
    d_ineq_matrix: np.ndarray | None = None
    d_ineq_rhs: np.ndarray | None = None
    d_lower: np.ndarray | None = None
    d_upper: np.ndarray | None = None

    @classmethod
    def ineq_rhs(cls, d_ineq_rhs) -> "ParamMap":
        """θ enters only ``h``; ``d_ineq_rhs`` is ``(k, r)`` or a single ``(r,)`` column."""
        d = np.atleast_2d(np.asarray(d_ineq_rhs, dtype=float))
        return cls(k=d.shape[0], d_ineq_rhs=d)

    @property
    def rhs_only(self) -> bool:
        return all(getattr(self, f) is None for f in
                   ("d_cost_matrix", "d_cost_vector", "d_eq_matrix", "d_ineq_matrix"))

    def reparameterize(self, M) -> "ParamMap":
        """Map for φ when θ = Mφ + c (``M`` is ``k × k'``)."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != self.k:
            raise ValueError(f"M has {M.shape[0]} rows, expected {self.k}")
        new = {}
        for f in fields(self):
            if f.name == "k":
                continue
            val = getattr(self, f.name)
            new[f.name] = None if val is None else np.tensordot(M.T, val, axes=1)
        return ParamMap(k=M.shape[1], **new)

    def blocks(self, problem: QpProblem, j: int):
        """Derivative blocks ``(dQ, dq, dA, db, dG, dh)`` for parameter ``j``.

        ``dG``/``dh`` cover the stacked inequalities, bounds included.
        """
        n, p, r = problem.n, problem.n_eq, problem.n_ineq
        lo, hi = problem.bound_indices()

        def pick(arr, shape):
            return np.zeros(shape) if arr is None else np.asarray(arr[j], dtype=float).reshape(shape)

        dQ = pick(self.d_cost_matrix, (n, n))
        dq = pick(self.d_cost_vector, (n,))
        dA = pick(self.d_eq_matrix, (p, n))
        db = pick(self.d_eq_rhs, (p,))
        dG = np.vstack([pick(self.d_ineq_matrix, (r, n)), np.zeros((lo.size + hi.size, n))])
        dl = pick(self.d_lower, (n,))
        du = pick(self.d_upper, (n,))
        dh = np.concatenate([pick(self.d_ineq_rhs, (r,)), -dl[lo], du[hi]])
        return dQ, dq, dA, db, dG, dh


@dataclass(frozen=True)
class SolutionJacobian:
    """∂(z*, ν*, λ*)/∂θ; ``d_ineq_duals`` rows follow ``stacked_inequalities()``."""

    d_primal: np.ndarray
    d_eq_duals: np.ndarray
    d_ineq_duals: np.ndarray
    active: np.ndarray


@dataclass(frozen=True)
class ValueGradient:
    d_value: np.ndarray


def _check_optimal(problem: QpProblem, solution: QpSolution):
    if not solution.optimal or not solution.kkt_residual <= OPTIMALITY_TOL * residual_scale(problem, solution):
        raise NotOptimalError(f"solution status {solution.status.value}, "
                              f"kkt residual {solution.kkt_residual:.3e}")


def _is_lp(problem: QpProblem) -> bool:
    return not np.any(problem.cost_matrix)


def differentiate_solution(problem: QpProblem, solution: QpSolution, param_map: ParamMap) -> SolutionJacobian:
    """Forward-mode Jacobian of the primal-dual solution via the differentiated KKT system.

    LPs are smoothed with a 1e-6 ridge and re-solved first, since their
    solution map is set-valued.
    """
    _check_optimal(problem, solution)
    if _is_lp(problem):
        problem = QpProblem(LP_SMOOTHING * np.eye(problem.n), problem.cost_vector, problem.eq_matrix,
                            problem.eq_rhs, problem.ineq_matrix, problem.ineq_rhs, problem.lower, problem.upper)
        solution = solve_qp(problem, tol=solution.tol)
        _check_optimal(problem, solution)

    z, nu = solution.primal, solution.eq_duals
    lam = solution.stacked_duals(problem)
    G, h = problem.stacked_inequalities()
    gap = G @ z - h
    n, p, r = problem.n, problem.n_eq, G.shape[0]
    # an interior-point optimum leaves a weakly active row with λ and the slack
    # both near √tol, while a strictly complementary row has one of them O(1)
    thresh = max(STRICT_COMPLEMENTARITY, 10.0 * np.sqrt(solution.tol))
    if r and np.min(np.maximum(np.abs(lam), np.abs(gap))) <= thresh:
        raise DegenerateKktError("strict complementarity fails; the solution map is not differentiable")

    A = problem.eq_matrix
    K = np.zeros((n + r + p, n + r + p))
    K[:n, :n] = problem.cost_matrix
    K[:n, n:n + r] = G.T
    K[:n, n + r:] = A.T
    K[n:n + r, :n] = lam[:, None] * G
    K[n:n + r, n:n + r] = np.diag(gap)
    K[n + r:, :n] = A

    rhs = np.zeros((n + r + p, param_map.k))
    for j in range(param_map.k):
        dQ, dq, dA, db, dG, dh = param_map.blocks(problem, j)
        rhs[:n, j] = -(dQ @ z + dq + dG.T @ lam + dA.T @ nu)
        rhs[n:n + r, j] = -lam * (dG @ z - dh)
        rhs[n + r:, j] = -(dA @ z - db)

    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateKktError("KKT matrix is singular") from exc
    if not np.all(np.isfinite(sol)) or np.linalg.cond(K) > 1e14:
        raise DegenerateKktError("KKT matrix is numerically singular")

    active = lam > -gap
    d_lam = sol[n:n + r]
    d_lam[~active] = 0.0
    return SolutionJacobian(d_primal=sol[:n], d_eq_duals=sol[n + r:], d_ineq_duals=d_lam, active=active)


def value_gradient(problem: QpProblem, solution: QpSolution, param_map: ParamMap) -> ValueGradient:
    """∂(optimal value)/∂θ as the θ-partial of the Lagrangian at the optimum."""
    _check_optimal(problem, solution)
    z, nu = solution.primal, solution.eq_duals
    lam = solution.stacked_duals(problem)
    out = np.zeros(param_map.k)
    for j in range(param_map.k):
        dQ, dq, dA, db, dG, dh = param_map.blocks(problem, j)
        out[j] = 0.5 * z @ dQ @ z + dq @ z + nu @ (dA @ z - db) + lam @ (dG @ z - dh)
    return ValueGradient(d_value=out)
