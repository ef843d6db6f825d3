"""Value-at-risk, CVaR and worst-case CVaR over a Wasserstein ambiguity set.

Everything here works on the additive-noise barrier ``h(x, w) = h(x) + w``
with scalar ``w``. Sample sets are empirical; the distributionally robust
estimates replace the ambiguity-set constraint by a fixed penalty ``λ`` on
the transport distance, which turns the worst case into small LPs.
"""
from __future__ import annotations

import enum
import math
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import truncnorm

from .diffopt import ParamMap, value_gradient
from .qp import InfeasibleError, QpProblem, QpSolution, solve_lp


class Case(str, enum.Enum):
    CASE1 = "case1"
    CASE2 = "case2"


@dataclass(frozen=True)
class SampleSet:
    """Noise samples ``{w^m}`` drawn from a Gaussian truncated to ``[lower, upper]``."""

    samples: np.ndarray
    seed: int | None = None
    mean: float = 0.0
    std: float = 0.1
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.samples, dtype=float))
        if w.ndim != 1 or w.size < 1:
            raise ValueError("need at least one sample")
        if not np.all(np.isfinite(w)):
            raise ValueError("samples must be finite")
        if np.any(w < self.lower - 1e-12) or np.any(w > self.upper + 1e-12):
            raise ValueError("samples fall outside the truncation bounds")
        object.__setattr__(self, "samples", w)

    @classmethod
    def draw(cls, n: int, mean: float = 0.0, std: float = 0.1, seed: int | None = None,
             truncation: float = 3.0) -> "SampleSet":
        """``n`` draws of N(mean, std²) truncated to ``mean ± truncation·std``."""
        lo, hi = mean - truncation * std, mean + truncation * std
        if std == 0.0:
            return cls(np.full(n, float(mean)), seed, mean, std, lo, hi)
        rng = np.random.default_rng(seed)
        w = truncnorm.rvs(-truncation, truncation, loc=mean, scale=std, size=n, random_state=rng)
        return cls(np.clip(w, lo, hi), seed, mean, std, lo, hi)

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    def scaled(self, k: float) -> "SampleSet":
        """Samples of ``k·w`` (k > 0), e.g. noise passed through a linear class-K gain."""
        return SampleSet(k * self.samples, self.seed, k * self.mean, k * self.std, k * self.lower, k * self.upper)


@dataclass(frozen=True)
class AmbiguitySpec:
    alpha: float = 0.95
    lambda_penalty: float = 1.0
    lower_bound: float = -0.3
    upper_bound: float = 0.3
    case: Case = Case.CASE1
    wasserstein_radius: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.lambda_penalty > 0.0:
            raise ValueError("lambda_penalty must be positive")
        if self.lower_bound > self.upper_bound:
            raise ValueError("lower_bound exceeds upper_bound")
        if self.wasserstein_radius < 0.0:
            raise ValueError("wasserstein_radius must be nonnegative")
        object.__setattr__(self, "case", Case(self.case))

    @classmethod
    def for_samples(cls, samples: SampleSet, **kwargs) -> "AmbiguitySpec":
        return cls(lower_bound=samples.lower, upper_bound=samples.upper, **kwargs)

    def scaled(self, k: float) -> "AmbiguitySpec":
        """Spec for noise ``k·w``: bounds scale by k, the per-unit transport penalty by 1/k."""
        return replace(self, lambda_penalty=self.lambda_penalty / k, lower_bound=k * self.lower_bound,
                       upper_bound=k * self.upper_bound, wasserstein_radius=k * self.wasserstein_radius)


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    eta_star: float
    slacks: np.ndarray
    duals: np.ndarray
    d_value_d_h: float
    case: Case = Case.CASE1
    penalty_slacks: np.ndarray | None = None
    fallback: bool = False


def var_oracle(values, alpha: float) -> float:
    """Order-statistic VaR: smallest sample η with empirical P(h <= η) >= α."""
    h = np.sort(np.atleast_1d(np.asarray(values, dtype=float)))
    if h.size == 0:
        raise ValueError("empty sample")
    idx = max(1, math.ceil(alpha * h.size - 1e-12))
    return float(h[min(idx, h.size) - 1])


def _cvar_weight(alpha: float, n: int) -> float:
    return 1.0 / ((1.0 - alpha) * n)


_TEMPLATES: OrderedDict = OrderedDict()
_TEMPLATE_CACHE_SIZE = 64


def _template(cost, G) -> QpProblem:
    # closed-loop use re-solves the same LP with a new h every step; validate its structure once
    key = (cost.tobytes(), G.shape, G.tobytes())
    problem = _TEMPLATES.get(key)
    if problem is None:
        n = cost.shape[0]
        problem = QpProblem(np.zeros((n, n)), cost, ineq_matrix=G, ineq_rhs=np.zeros(G.shape[0]))
        _TEMPLATES[key] = problem
        if len(_TEMPLATES) > _TEMPLATE_CACHE_SIZE:
            _TEMPLATES.popitem(last=False)
    else:
        _TEMPLATES.move_to_end(key)
    return problem


def _lp(cost, rows, rhs_const, rhs_h, h_val) -> tuple[QpProblem, QpSolution, np.ndarray]:
    """Assemble and solve ``min cost·z s.t. rows z <= rhs_const + rhs_h·h``."""
    G = np.ascontiguousarray(rows, dtype=float)
    rhs = rhs_const + rhs_h * h_val
    problem = _template(np.ascontiguousarray(cost, dtype=float), G).with_ineq_rhs(rhs)
    sol = solve_lp(problem)
    sol.raise_for_status()
    return problem, sol, rhs_h


def empirical_cvar(values, alpha: float) -> tuple[float, float]:
    """Sample CVaR by the LP ``min η + Σ s_m / ((1-α)N)``, ``s_m >= h_m - η``, ``s_m >= 0``.

    Returns ``(value, eta_star)``.
    """
    h = np.atleast_1d(np.asarray(values, dtype=float))
    if h.size == 0:
        raise ValueError("empty sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    n = h.size
    cost = np.concatenate([[1.0], np.full(n, _cvar_weight(alpha, n))])
    eye = np.eye(n)
    G = np.vstack([np.hstack([-np.ones((n, 1)), -eye]), np.hstack([np.zeros((n, 1)), -eye])])
    rhs = np.concatenate([-h, np.zeros(n)])
    _, sol, _ = _lp(cost, G, rhs, np.zeros(2 * n), 0.0)
    return sol.objective_value, float(sol.primal[0])


def wasserstein_1d(p, q) -> float:
    """Order-1 Wasserstein distance between two empirical distributions on the line."""
    p = np.sort(np.atleast_1d(np.asarray(p, dtype=float)))
    q = np.sort(np.atleast_1d(np.asarray(q, dtype=float)))
    if p.size == 0 or q.size == 0:
        raise ValueError("empty sample")
    if p.size == q.size:
        return float(np.mean(np.abs(p - q)))
    # unequal supports: integrate |F_p - F_q| between consecutive atoms
    grid = np.sort(np.concatenate([p, q]))
    widths = np.diff(grid)
    cdf_p = np.searchsorted(p, grid[:-1], side="right") / p.size
    cdf_q = np.searchsorted(q, grid[:-1], side="right") / q.size
    return float(np.sum(np.abs(cdf_p - cdf_q) * widths))


def _estimate(problem, sol, rhs_h, case, n_slack, penalty_slacks=None) -> RiskEstimate:
    grad = value_gradient(problem, sol, ParamMap.ineq_rhs(rhs_h)).d_value[0]
    return RiskEstimate(
        value=sol.objective_value,
        eta_star=float(sol.primal[0]),
        slacks=sol.primal[1:1 + n_slack].copy(),
        duals=sol.ineq_duals.copy(),
        d_value_d_h=float(grad),
        case=case,
        penalty_slacks=penalty_slacks,
    )


def dr_cvar_case1(h_val: float, samples: SampleSet, spec: AmbiguitySpec) -> RiskEstimate:
    """Worst-case CVaR when every sample sits on the flat side of the hinge.

    The inner supremum is attained at ``w = w^m``; the LP has variables
    ``(η, s_1..s_N)`` and rows ``h+w^m-η <= s^m``, ``h+w^m-η <= 0``,
    ``s^m >= 0``. Its optimum is ``max_m (h + w^m)``.
    """
    w = samples.samples
    n = w.size
    cost = np.concatenate([[1.0], np.full(n, _cvar_weight(spec.alpha, n))])
    eye = np.eye(n)
    col = -np.ones((n, 1))
    zero_col = np.zeros((n, 1))
    G = np.vstack([
        np.hstack([col, -eye]),                     # h + w^m - η - s^m <= 0
        np.hstack([col, np.zeros((n, n))]),         # h + w^m - η <= 0
        np.hstack([zero_col, -eye]),                # -s^m <= 0
    ])
    rhs_const = np.concatenate([-w, -w, np.zeros(n)])
    rhs_h = np.concatenate([-np.ones(2 * n), np.zeros(n)])
    problem, sol, rhs_h = _lp(cost, G, rhs_const, rhs_h, h_val)
    return _estimate(problem, sol, rhs_h, Case.CASE1, n)


def _case2_candidates(w, spec):
    """Candidate maximizers ``(w_k, transport cost |w_k - w^m|)`` for each sample."""
    lo, hi = spec.lower_bound, spec.upper_bound
    return [(hi, hi - w), (lo, w - lo), (w, np.zeros_like(w))]


def dr_cvar_case2(h_val: float, samples: SampleSet, spec: AmbiguitySpec,
                  formulation: str = "candidate") -> RiskEstimate:
    """Worst-case CVaR with the inner supremum taken over the vertices ``{w̲, w̄, w^m}``.

    ``formulation="candidate"`` (default) solves the penalized problem
    ``min_η η + 1/((1-α)N) Σ_m max_k([h+w_k-η]_+ - λ|w_k-w^m|)`` exactly as an
    LP in ``(η, L_1..L_N)``. ``formulation="printed"`` solves the three-group
    LP in ``(η, s, L)`` with both slack families in the objective and the
    ``h + w_k - η >= 0`` rows that restrict it to the active side of the
    hinge; it raises :class:`~drcbf.qp.InfeasibleError` if those rows conflict.
    """
    if not spec.lower_bound <= spec.upper_bound:
        raise ValueError("case 2 needs finite bounds lower <= upper")
    w = samples.samples
    n = w.size
    c = _cvar_weight(spec.alpha, n)
    lam = spec.lambda_penalty
    cands = _case2_candidates(w, spec)
    eye = np.eye(n)
    col = -np.ones((n, 1))

    if formulation == "candidate":
        cost = np.concatenate([[1.0], np.full(n, c)])
        blocks, consts, hs = [], [], []
        for wk, dist in cands:
            wk = np.broadcast_to(wk, w.shape)
            blocks.append(np.hstack([col, -eye]))          # h + w_k - η - λ|w_k-w^m| <= L^m
            consts.append(-wk + lam * dist)
            hs.append(-np.ones(n))
        blocks.append(np.hstack([np.zeros((n, 1)), -eye]))  # L^m >= 0
        consts.append(np.zeros(n))
        hs.append(np.zeros(n))
        problem, sol, rhs_h = _lp(cost, np.vstack(blocks), np.concatenate(consts), np.concatenate(hs), h_val)
        return _estimate(problem, sol, rhs_h, Case.CASE2, n)

    if formulation != "printed":
        raise ValueError(f"unknown formulation {formulation!r}")
    # variables (η, s_1..s_N, L_1..L_N)
    cost = np.concatenate([[1.0], np.full(2 * n, c)])
    zero = np.zeros((n, n))
    signs = [-lam, lam, 0.0]   # penalty terms as printed: -λ(w̄-w^m), +λ(w̲-w^m), none
    blocks, consts, hs = [], [], []
    for (wk, _), sgn in zip(cands, signs):
        wk = np.broadcast_to(wk, w.shape)
        blocks.append(np.hstack([col, -eye, zero]))            # h + w_k - η <= s^m
        consts.append(-wk)
        hs.append(-np.ones(n))
        blocks.append(np.hstack([col, zero, -eye]))            # h + w_k - η ± λ(w_k - w^m) <= L^m
        consts.append(-wk - sgn * (wk - w))
        hs.append(-np.ones(n))
        blocks.append(np.hstack([-col, zero, zero]))           # h + w_k - η >= 0
        consts.append(wk.copy())
        hs.append(np.ones(n))
    problem, sol, rhs_h = _lp(cost, np.vstack(blocks), np.concatenate(consts), np.concatenate(hs), h_val)
    est = _estimate(problem, sol, rhs_h, Case.CASE2, n)
    return replace(est, penalty_slacks=sol.primal[1 + n:].copy())


def dr_cvar(h_val: float, samples: SampleSet, spec: AmbiguitySpec) -> RiskEstimate:
    """Estimate with the case picked by ``spec.case``; Case 2 failures fall back to Case 1."""
    if spec.case is Case.CASE2:
        try:
            return dr_cvar_case2(h_val, samples, spec)
        except InfeasibleError:
            return replace(dr_cvar_case1(h_val, samples, spec), fallback=True)
    return dr_cvar_case1(h_val, samples, spec)


def risk_gradient(barrier_eval, samples: SampleSet, spec: AmbiguitySpec) -> tuple[RiskEstimate, np.ndarray]:
    """DR-CVaR of ``h(x) + w`` and its state gradient ``∂CVaR/∂h · ∂h/∂x``."""
    est = dr_cvar(barrier_eval.value, samples, spec)
    return est, est.d_value_d_h * np.asarray(barrier_eval.gradient, dtype=float)
