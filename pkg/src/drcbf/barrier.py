"""Control barrier conditions and the controller QPs built from them.

Safety is ``h <= 0`` throughout, so a control barrier condition (CBC) reads::

    ∂b/∂x · (f(x) + g(x) u) + κ(b) <= 0

where ``b`` is either the nominal barrier ``h(x)`` (vanilla CBF) or its
worst-case CVaR (DR-CBF). Each CBC is one affine row ``a·u + c <= 0`` in the
controller QP.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .qp import QpError, QpProblem, Status, solve_lp, solve_qp


class ControllerInfeasibleError(QpError):
    """The controller QP has no solution; ``diagnosis`` says which constraints conflict."""

    def __init__(self, diagnosis: str):
        super().__init__(diagnosis)
        self.diagnosis = diagnosis


class RelativeDegreeError(ValueError):
    pass


@dataclass(frozen=True)
class BarrierEval:
    value: float
    gradient: np.ndarray
    h_dot: float | None = None
    hessian: np.ndarray | None = None


@dataclass(frozen=True)
class KappaFn:
    """Linear class-K function ``κ(v) = k·v``."""

    coefficient: float
    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise ValueError("only linear class-K functions are supported")
        if not self.coefficient > 0:
            raise ValueError("kappa coefficient must be positive")

    def __call__(self, v):
        return self.coefficient * v


@dataclass(frozen=True)
class ControlAffineModel:
    """ẋ = f(x) + g(x)u with box-bounded controls."""

    state_dim: int
    control_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    actuation: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    drift_jacobian: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if np.shape(self.lower) != (self.control_dim,) or np.shape(self.upper) != (self.control_dim,):
            raise ValueError("control bounds must match control_dim")
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ValueError("control lower bound exceeds upper bound")

    def derivative(self, x, u) -> np.ndarray:
        return self.drift(x) + self.actuation(x) @ np.asarray(u, dtype=float)


@dataclass(frozen=True)
class ClfSpec:
    """Quadratic CLF ``V = ½‖x - target‖²`` with relaxation ``δ`` penalized by ``relaxation_weight·δ²``.

    ``angle_index`` lists coordinates whose error is wrapped to (-π, π].
    """

    target: np.ndarray
    control_weight: np.ndarray
    relaxation_weight: float
    angle_index: tuple[int, ...] = ()

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.control_weight, dtype=float))
        if W.shape[0] == 1 and W.shape[1] > 1 and np.asarray(self.control_weight).ndim == 1:
            W = np.diag(W[0])
        if np.any(np.linalg.eigvalsh(0.5 * (W + W.T)) < -1e-12):
            raise ValueError("control_weight must be positive semidefinite")
        if not self.relaxation_weight > 0:
            raise ValueError("relaxation_weight must be positive")
        object.__setattr__(self, "control_weight", W)
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float))

    def error(self, x) -> np.ndarray:
        e = np.asarray(x, dtype=float) - self.target
        for i in self.angle_index:
            e[i] = (e[i] + np.pi) % (2 * np.pi) - np.pi
        return e


@dataclass(frozen=True)
class CbcRow:
    """One barrier condition ``coeffs·u + offset <= 0``."""

    coeffs: np.ndarray
    offset: float

    def violation(self, u) -> float:
        return float(self.coeffs @ np.asarray(u, dtype=float) + self.offset)


def cbc_row(model: ControlAffineModel, x, value: float, gradient, kappa: KappaFn) -> CbcRow:
    grad = np.asarray(gradient, dtype=float)
    return CbcRow(coeffs=grad @ model.actuation(x), offset=float(grad @ model.drift(x) + kappa(value)))


def _diagnose(rows: Sequence[CbcRow], lower, upper) -> str:
    for i, row in enumerate(rows):
        best = np.sum(np.minimum(row.coeffs * lower, row.coeffs * upper)) + row.offset
        if best > 1e-9:
            return f"barrier condition {i} cannot be met within the control bounds (min violation {best:.3e})"
    return "barrier conditions are jointly inconsistent within the control bounds"


def _solve_controller(P, q, G, h, lower, upper, rows, tol) -> np.ndarray:
    problem = QpProblem(P, q, ineq_matrix=G, ineq_rhs=h, lower=lower, upper=upper)
    sol = solve_qp(problem, tol=tol)
    if sol.status is Status.OPTIMAL:
        return sol.primal
    raise ControllerInfeasibleError(_diagnose(rows, lower[:rows[0].coeffs.size] if rows else lower,
                                              upper[:rows[0].coeffs.size] if rows else upper))


def clf_qp(model: ControlAffineModel, clf: ClfSpec, x, rows: Sequence[CbcRow], tol: float = 1e-8) -> np.ndarray:
    """``min uᵀQu + q δ²`` s.t. ``∂V/∂x·(f+gu) + V <= δ``, the CBC rows, and the control box."""
    x = np.asarray(x, dtype=float)
    m = model.control_dim
    e = clf.error(x)
    P = np.zeros((m + 1, m + 1))
    P[:m, :m] = clf.control_weight + clf.control_weight.T
    P[m, m] = 2.0 * clf.relaxation_weight
    G = [np.concatenate([e @ model.actuation(x), [-1.0]])]
    h = [-(e @ model.drift(x)) - 0.5 * e @ e]
    for row in rows:
        G.append(np.concatenate([row.coeffs, [0.0]]))
        h.append(-row.offset)
    lower = np.concatenate([model.lower, [-np.inf]])
    upper = np.concatenate([model.upper, [np.inf]])
    z = _solve_controller(P, np.zeros(m + 1), np.array(G), np.array(h), lower, upper, rows, tol)
    return z[:m]


def tracking_qp(model: ControlAffineModel, u_nom, rows: Sequence[CbcRow], tol: float = 1e-8) -> np.ndarray:
    """``min ‖u - u_nom‖²`` s.t. the CBC rows and the control box."""
    m = model.control_dim
    u_nom = np.asarray(u_nom, dtype=float)
    G = np.array([r.coeffs for r in rows]).reshape(len(rows), m)
    h = np.array([-r.offset for r in rows])
    return _solve_controller(2.0 * np.eye(m), -2.0 * u_nom, G, h, model.lower, model.upper, rows, tol)


def min_violation_control(model: ControlAffineModel, rows: Sequence[CbcRow]) -> np.ndarray:
    """Control in the box minimizing the summed positive part of the CBC violations."""
    m, k = model.control_dim, len(rows)
    if k == 0:
        return np.clip(np.zeros(m), model.lower, model.upper)
    # variables (u, t): min Σt  s.t. a_i·u - t_i <= -c_i, t >= 0
    G = np.hstack([np.array([r.coeffs for r in rows]), -np.eye(k)])
    h = np.array([-r.offset for r in rows])
    lower = np.concatenate([model.lower, np.zeros(k)])
    upper = np.concatenate([model.upper, np.full(k, np.inf)])
    sol = solve_lp(QpProblem(np.zeros((m + k, m + k)), np.concatenate([np.zeros(m), np.ones(k)]),
                             ineq_matrix=G, ineq_rhs=h, lower=lower, upper=upper))
    return np.clip(sol.primal[:m], model.lower, model.upper)


@dataclass(frozen=True)
class ControlResult:
    control: np.ndarray
    status: str = "ok"
    rows: tuple[CbcRow, ...] = field(default_factory=tuple)


def filtered_control(model: ControlAffineModel, x, rows: Sequence[CbcRow], clf: ClfSpec | None = None,
                     u_nom=None) -> ControlResult:
    """Controller QP with the fallback chain used in closed loop.

    Tries the CLF (or tracking) QP; if infeasible, the safety-only QP
    ``min ‖u‖²``; if that fails too, the box control with least CBC violation.
    """
    rows = tuple(rows)
    try:
        if clf is not None:
            return ControlResult(clf_qp(model, clf, x, rows), "ok", rows)
        return ControlResult(tracking_qp(model, u_nom, rows), "ok", rows)
    except ControllerInfeasibleError:
        pass
    if clf is not None:
        try:
            return ControlResult(tracking_qp(model, np.zeros(model.control_dim), rows), "safety_only", rows)
        except ControllerInfeasibleError:
            pass
    return ControlResult(min_violation_control(model, rows), "clamped", rows)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def vanilla_cbf_control(model: ControlAffineModel, barrier_eval, kappa, clf: ClfSpec, x) -> np.ndarray:
    """CLF-QP with the noise-free barrier conditions ``∂h/∂x(f+gu) + κ(h) <= 0``."""
    evals = _as_list(barrier_eval)
    kappas = _as_list(kappa) * (len(evals) if not isinstance(kappa, (list, tuple)) else 1)
    rows = [cbc_row(model, x, ev.value, ev.gradient, k) for ev, k in zip(evals, kappas)]
    return clf_qp(model, clf, x, rows)


def drcbf_control(model: ControlAffineModel, risk_out, kappa, clf: ClfSpec, x) -> np.ndarray:
    """CLF-QP with ``∂CVaR/∂x(f+gu) + κ(CVaR) <= 0``; ``risk_out`` is ``(RiskEstimate, state_gradient)`` or a list."""
    outs = risk_out if isinstance(risk_out, list) else [risk_out]
    kappas = _as_list(kappa) * (len(outs) if not isinstance(kappa, (list, tuple)) else 1)
    rows = [cbc_row(model, x, est.value, grad, k) for (est, grad), k in zip(outs, kappas)]
    return clf_qp(model, clf, x, rows)


def hocbf_psi(model: ControlAffineModel, h_eval: BarrierEval, x, kappa1: KappaFn) -> BarrierEval:
    """First high-order barrier ``ψ = ḣ + κ₁(h)`` with ``ḣ = ∂h/∂x·f(x)``.

    ``∂ψ/∂x = ∇²h·f + (∂f/∂x)ᵀ∇h + κ₁'·∇h``; needs ``h_eval.hessian`` and the
    model's drift Jacobian.
    """
    x = np.asarray(x, dtype=float)
    grad = np.asarray(h_eval.gradient, dtype=float)
    lg = grad @ model.actuation(x)
    if np.max(np.abs(lg)) > 1e-9:
        raise RelativeDegreeError("barrier has relative degree 1 with respect to this model")
    if h_eval.hessian is None or model.drift_jacobian is None:
        raise ValueError("hocbf_psi needs the barrier Hessian and the drift Jacobian")
    f = model.drift(x)
    h_dot = float(grad @ f)
    value = h_dot + kappa1(h_eval.value)
    gradient = h_eval.hessian @ f + model.drift_jacobian(x).T @ grad + kappa1.coefficient * grad
    return BarrierEval(value=value, gradient=gradient, h_dot=h_dot)


def second_order_risk(psi_eval: BarrierEval, samples, spec, kappa1: KappaFn):
    """DR-CVaR of ``ψ(x, w) = ψ(x) + κ₁·w`` and its state gradient."""
    from .risk import risk_gradient

    k = kappa1.coefficient
    return risk_gradient(psi_eval, samples.scaled(k), spec.scaled(k))


def drcbf_second_order_control(model: ControlAffineModel, psi_eval, samples, spec, kappa1, kappa2,
                               u_nom, x) -> np.ndarray:
    """Tracking QP ``min ‖u - u_nom‖²`` with ``∂CVaR(ψ)/∂x(f+gu) + κ₂(CVaR(ψ)) <= 0`` per barrier."""
    psis = _as_list(psi_eval)
    k1s = _as_list(kappa1) * (len(psis) if not isinstance(kappa1, (list, tuple)) else 1)
    k2s = _as_list(kappa2) * (len(psis) if not isinstance(kappa2, (list, tuple)) else 1)
    rows = []
    for psi, k1, k2 in zip(psis, k1s, k2s):
        est, grad = second_order_risk(psi, samples, spec, k1)
        rows.append(cbc_row(model, x, est.value, grad, k2))
    return tracking_qp(model, u_nom, rows)
