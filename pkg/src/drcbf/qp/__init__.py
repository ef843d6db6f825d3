"""Dense convex QP/LP solver.

Problems have the form::

    min  ½ zᵀQz + qᵀz
    s.t. A z = b
         G z <= h
         lower <= z <= upper      (optional, per variable)

and are solved by a primal-dual interior-point method with Mehrotra
predictor-corrector steps. The inner loop lives in a compiled kernel
(``_kernel``); if that extension is missing, or ``DRCBF_BACKEND=python`` is
set, the numpy twin in ``_kernel_py`` is used instead. Both implement the
same iteration.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernel_py

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
LP_REGULARIZATION = 1e-9

_KERNELS = {"python": _kernel_py.ipm}
try:
    from . import _kernel as _kernel_c
except ImportError:  # pragma: no cover - depends on the build
    _kernel_c = None
else:
    _KERNELS["cython"] = _kernel_c.ipm


def _select_backend() -> str:
    wanted = os.environ.get("DRCBF_BACKEND", "auto").lower()
    if wanted == "python":
        return "python"
    if wanted == "cython" and "cython" not in _KERNELS:
        raise ImportError("DRCBF_BACKEND=cython but the compiled kernel is not built")
    return "cython" if "cython" in _KERNELS else "python"


BACKEND = _select_backend()


def available_backends() -> list[str]:
    return sorted(_KERNELS)


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITER = "MaxIter"


_STATUS = {
    _kernel_py.OPTIMAL: Status.OPTIMAL,
    _kernel_py.INFEASIBLE: Status.INFEASIBLE,
    _kernel_py.UNBOUNDED: Status.UNBOUNDED,
    _kernel_py.MAX_ITER: Status.MAX_ITER,
}


class QpError(Exception):
    """Base class for solver failures."""


class InvalidProblemError(QpError, ValueError):
    pass


class InfeasibleError(QpError):
    pass


class UnboundedError(QpError):
    pass


class MaxIterError(QpError):
    pass


def _as_matrix(a, rows, cols, name):
    if a is None:
        return np.zeros((rows, cols))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and rows == 1:
        a = a.reshape(1, -1)
    if a.size == 0:
        a = a.reshape(rows, cols)
    if a.shape != (rows, cols):
        raise InvalidProblemError(f"{name} has shape {a.shape}, expected {(rows, cols)}")
    return a


def _as_vector(v, size, name):
    if v is None:
        return np.zeros(size)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (size,):
        raise InvalidProblemError(f"{name} has shape {v.shape}, expected {(size,)}")
    return v


@dataclass(frozen=True)
class QpProblem:
    """Convex QP ``min ½zᵀQz+qᵀz s.t. Az=b, Gz<=h, lower<=z<=upper``.

    Missing blocks default to empty; infinite entries of ``lower``/``upper``
    are ignored.
    """

    cost_matrix: np.ndarray
    cost_vector: np.ndarray
    eq_matrix: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    ineq_matrix: np.ndarray | None = None
    ineq_rhs: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.cost_vector, dtype=float))
        if q.ndim != 1:
            raise InvalidProblemError("cost_vector must be one-dimensional")
        n = q.shape[0]
        Q = _as_matrix(self.cost_matrix, n, n, "cost_matrix")
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-12:
            raise InvalidProblemError("cost_matrix is not symmetric")
        b = np.atleast_1d(np.asarray(self.eq_rhs if self.eq_rhs is not None else [], dtype=float))
        A = _as_matrix(self.eq_matrix, b.shape[0], n, "eq_matrix")
        h = np.atleast_1d(np.asarray(self.ineq_rhs if self.ineq_rhs is not None else [], dtype=float))
        G = _as_matrix(self.ineq_matrix, h.shape[0], n, "ineq_matrix")
        if A.shape[0] > n:
            raise InvalidProblemError("more equality constraints than variables")
        if A.shape[0] and np.linalg.matrix_rank(A) < A.shape[0]:
            raise InvalidProblemError("eq_matrix is not full row rank")
        lower = None if self.lower is None else _as_vector(self.lower, n, "lower")
        upper = None if self.upper is None else _as_vector(self.upper, n, "upper")
        if lower is not None and upper is not None and np.any(lower > upper):
            raise InvalidProblemError("lower bound exceeds upper bound")
        for arr in (Q, q, A, b, G, h):
            if not np.all(np.isfinite(arr)):
                raise InvalidProblemError("problem data must be finite")
        object.__setattr__(self, "cost_matrix", Q)
        object.__setattr__(self, "cost_vector", q)
        object.__setattr__(self, "eq_matrix", A)
        object.__setattr__(self, "eq_rhs", b)
        object.__setattr__(self, "ineq_matrix", G)
        object.__setattr__(self, "ineq_rhs", h)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n(self) -> int:
        return self.cost_vector.shape[0]

    @property
    def n_eq(self) -> int:
        return self.eq_rhs.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.ineq_rhs.shape[0]

    def bound_indices(self) -> tuple[np.ndarray, np.ndarray]:
        return self._stacked[2], self._stacked[3]

    def stacked_inequalities(self) -> tuple[np.ndarray, np.ndarray]:
        """All inequalities as one ``G z <= h`` block: G rows, then lower, then upper."""
        return self._stacked[0], self._stacked[1]

    @cached_property
    def _stacked(self):
        # the problem is immutable, so the stacked form is built once
        lo = np.flatnonzero(np.isfinite(self.lower)) if self.lower is not None else np.zeros(0, int)
        hi = np.flatnonzero(np.isfinite(self.upper)) if self.upper is not None else np.zeros(0, int)
        eye = np.eye(self.n)
        G = np.ascontiguousarray(np.vstack([self.ineq_matrix, -eye[lo], eye[hi]]))
        h = np.concatenate([self.ineq_rhs, -self.lower[lo] if lo.size else [], self.upper[hi] if hi.size else []])
        for a in (G, h, lo, hi):
            a.flags.writeable = False
        return G, h, lo, hi

    def with_ineq_rhs(self, ineq_rhs) -> "QpProblem":
        """Same problem with a new ``h``; skips re-validating the unchanged blocks."""
        h = _as_vector(ineq_rhs, self.n_ineq, "ineq_rhs")
        if not np.all(np.isfinite(h)):
            raise InvalidProblemError("problem data must be finite")
        new = object.__new__(QpProblem)
        for f in ("cost_matrix", "cost_vector", "eq_matrix", "eq_rhs", "ineq_matrix", "lower", "upper"):
            object.__setattr__(new, f, getattr(self, f))
        object.__setattr__(new, "ineq_rhs", h)
        G, h_old, lo, hi = self._stacked
        h_new = np.concatenate([h, h_old[h.size:]])
        h_new.flags.writeable = False
        new.__dict__["_stacked"] = (G, h_new, lo, hi)
        return new

    def scaled(self, c: float) -> "QpProblem":
        """Same feasible set, objective multiplied by ``c``."""
        return QpProblem(c * self.cost_matrix, c * self.cost_vector, self.eq_matrix, self.eq_rhs,
                         self.ineq_matrix, self.ineq_rhs, self.lower, self.upper)

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.cost_matrix @ z + self.cost_vector @ z)


@dataclass(frozen=True)
class QpSolution:
    primal: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    objective_value: float
    status: Status
    iterations: int
    kkt_residual: float
    lower_duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    upper_duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tol: float = DEFAULT_TOL

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def stacked_duals(self, problem: QpProblem) -> np.ndarray:
        """Duals in the order of ``problem.stacked_inequalities()``."""
        lo, hi = problem.bound_indices()
        lower = self.lower_duals[lo] if self.lower_duals.size else np.zeros(lo.size)
        upper = self.upper_duals[hi] if self.upper_duals.size else np.zeros(hi.size)
        return np.concatenate([self.ineq_duals, lower, upper])

    def raise_for_status(self) -> "QpSolution":
        if self.status is Status.INFEASIBLE:
            raise InfeasibleError(f"problem infeasible after {self.iterations} iterations")
        if self.status is Status.UNBOUNDED:
            raise UnboundedError("objective unbounded below on the feasible set")
        if self.status is Status.MAX_ITER:
            raise MaxIterError(f"no convergence in {self.iterations} iterations "
                               f"(kkt residual {self.kkt_residual:.3e})")
        return self


def _residual_parts(problem: QpProblem, z, nu, lam_stacked) -> tuple[float, float, float, float]:
    G, h = problem.stacked_inequalities()
    if G.shape[0] != lam_stacked.shape[0] or z.shape[0] != problem.n or nu.shape[0] != problem.n_eq:
        raise InvalidProblemError("solution dimensions do not match the problem")
    stat = problem.cost_matrix @ z + problem.cost_vector + problem.eq_matrix.T @ nu + G.T @ lam_stacked
    slack = G @ z - h
    primal = max(np.max(np.abs(problem.eq_matrix @ z - problem.eq_rhs), initial=0.0),
                 np.max(np.maximum(slack, 0.0), initial=0.0))
    dual = np.max(np.maximum(-lam_stacked, 0.0), initial=0.0)
    comp = np.max(np.abs(lam_stacked * slack), initial=0.0)
    return float(np.max(np.abs(stat), initial=0.0)), float(primal), float(dual), float(comp)


def kkt_residual(problem: QpProblem, solution: QpSolution) -> float:
    """Largest violation among stationarity, primal/dual feasibility and complementarity."""
    z = np.asarray(solution.primal, dtype=float)
    nu = np.asarray(solution.eq_duals, dtype=float)
    lam = solution.stacked_duals(problem)
    return max(_residual_parts(problem, z, nu, lam))


def residual_scale(problem: QpProblem, solution: QpSolution) -> float:
    """Data scale the stopping rule measures residuals against (at least 1)."""
    return _scale(problem, np.asarray(solution.primal, dtype=float))


def _scale(problem, z) -> float:
    _, h = problem.stacked_inequalities()
    parts = [1.0, abs(problem.objective(z))]
    for v in (h, problem.eq_rhs, problem.cost_vector, problem.cost_matrix @ z):
        parts.append(float(np.max(np.abs(v), initial=0.0)))
    return max(parts)


def solve_qp(problem: QpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
             backend: str | None = None) -> QpSolution:
    """Solve a convex QP; the returned status says whether it converged.

    Convergence is relative: primal residuals are compared with
    ``tol·max(1, ‖h‖∞, ‖b‖∞)``, stationarity with ``tol·max(1, ‖q‖∞, ‖Qz‖∞)``
    and the duality gap with ``tol·max(1, |objective|)``.
    """
    if not tol > 0:
        raise InvalidProblemError("tol must be positive")
    kernel = _KERNELS[backend or BACKEND]
    return _solve(problem, problem.cost_matrix, tol, max_iter, kernel)


def solve_lp(problem: QpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
             backend: str | None = None) -> QpSolution:
    """Solve an LP (zero cost matrix); a 1e-9 ridge keeps the Newton system nonsingular."""
    if np.any(problem.cost_matrix != 0.0):
        raise InvalidProblemError("solve_lp requires a zero cost_matrix")
    if not tol > 0:
        raise InvalidProblemError("tol must be positive")
    kernel = _KERNELS[backend or BACKEND]
    reg = LP_REGULARIZATION * np.eye(problem.n)
    return _solve(problem, reg, tol, max_iter, kernel)


def _polish(problem, P, G, h, lam_scaled, s):
    """Re-solve the KKT system on the active set the interior point settled on.

    ``lam_scaled`` are the kernel's multipliers for the normalized cost, so the
    λ > s test does not depend on how the objective happens to be scaled.
    Returns the polished ``(z, ν, λ)``, or None if the equality system is
    singular. The caller keeps whichever point has the smaller KKT residual.
    """
    act = np.flatnonzero(lam_scaled > s)
    n, p, k = problem.n, problem.n_eq, act.size
    if k + p > n and k + p > 0:
        return None
    Ga = G[act]
    K = np.zeros((n + k + p, n + k + p))
    K[:n, :n] = P
    K[:n, n:n + k] = Ga.T
    K[n:n + k, :n] = Ga
    K[:n, n + k:] = problem.eq_matrix.T
    K[n + k:, :n] = problem.eq_matrix
    rhs = np.concatenate([-problem.cost_vector, h[act], problem.eq_rhs])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    lam_new = np.zeros_like(lam_scaled)
    lam_new[act] = sol[n:n + k]
    return sol[:n], sol[n + k:], lam_new


def _polish_ok(problem, z, nu, lam, tol) -> bool:
    # complementarity holds by construction (λ = 0 off the active set, slack = 0 on
    # it), so only feasibility and stationarity need checking
    stat, primal, dual, _ = _residual_parts(problem, z, nu, lam)
    _, h = problem.stacked_inequalities()
    scale_p = max(1.0, float(np.max(np.abs(h), initial=0.0)), float(np.max(np.abs(problem.eq_rhs), initial=0.0)))
    return (primal <= tol * scale_p and dual <= tol * max(1.0, float(np.max(np.abs(lam), initial=0.0)))
            and stat <= tol * _scale(problem, z))


def _solve(problem, P, tol, max_iter, kernel) -> QpSolution:
    G, h = problem.stacked_inequalities()
    # normalize the cost so the multipliers are O(1); large duals make the Newton
    # system so ill-conditioned that the iterates stall. The floor keeps the
    # stopping rule identical to the unscaled problem's
    c = 1.0 / max(1.0, float(np.max(np.abs(P), initial=0.0)), float(np.max(np.abs(problem.cost_vector), initial=0.0)))
    z, nu, lam, s, iters, code = kernel(
        np.ascontiguousarray(P * c), problem.cost_vector * c, problem.eq_matrix, problem.eq_rhs,
        np.ascontiguousarray(G), h, float(tol), int(max_iter), c)
    z = np.asarray(z)
    nu = np.asarray(nu) / c
    lam = np.asarray(lam) / c
    status = _STATUS[code]
    if status in (Status.OPTIMAL, Status.MAX_ITER):
        # interior-point accuracy is relative to the objective, so components whose
        # own cost is tiny next to the dominant terms come out loose (or the iterates
        # stall); re-solving on the identified active set recovers them
        polished = _polish(problem, P, G, h, lam * c, np.asarray(s))
        if polished is not None and _polish_ok(problem, *polished, tol):
            z, nu, lam = polished
            status = Status.OPTIMAL
    r = problem.n_ineq
    lo, hi = problem.bound_indices()
    lower_duals = np.zeros(problem.n)
    upper_duals = np.zeros(problem.n)
    lower_duals[lo] = lam[r:r + lo.size]
    upper_duals[hi] = lam[r + lo.size:]
    sol = QpSolution(
        primal=z,
        eq_duals=nu,
        ineq_duals=lam[:r].copy(),
        objective_value=problem.objective(z),
        status=status,
        iterations=int(iters),
        kkt_residual=float("nan"),
        lower_duals=lower_duals,
        upper_duals=upper_duals,
        tol=tol,
    )
    object.__setattr__(sol, "kkt_residual", kkt_residual(problem, sol))
    return sol


__all__ = [
    "BACKEND",
    "DEFAULT_TOL",
    "InfeasibleError",
    "InvalidProblemError",
    "MaxIterError",
    "QpError",
    "QpProblem",
    "QpSolution",
    "Status",
    "UnboundedError",
    "available_backends",
    "kkt_residual",
    "residual_scale",
    "solve_lp",
    "solve_qp",
]
