import numpy as np
import pytest
from hypothesis import given, strategies as st

from drcbf import oracles, risk
from drcbf.barrier import BarrierEval
from drcbf.plants import Obstacle, circle_barrier
from drcbf.qp import InfeasibleError
from drcbf.risk import (AmbiguitySpec, Case, SampleSet, dr_cvar, dr_cvar_case1, dr_cvar_case2, empirical_cvar,
                        risk_gradient, var_oracle, wasserstein_1d)

THREE = SampleSet(np.array([-0.1, 0.0, 0.1]), lower=-0.3, upper=0.3)


def spec2(**kw):
    base = dict(alpha=0.95, lambda_penalty=1.0, lower_bound=-0.3, upper_bound=0.3, case=Case.CASE2)
    base.update(kw)
    return AmbiguitySpec(**base)


# ---------------------------------------------------------------- VaR / CVaR

def test_var_median():
    assert var_oracle([1, 2, 3, 4], 0.5) == 2


def test_var_constant():
    for a in (0.1, 0.5, 0.99):
        assert var_oracle([3.3] * 7, a) == 3.3


def test_var_normal_quantile():
    draws = np.random.default_rng(0).standard_normal(1000)
    assert var_oracle(draws, 0.95) == pytest.approx(1.645, abs=0.15)


def test_cvar_constant():
    v, eta = empirical_cvar([0.7] * 9, 0.9)
    assert v == pytest.approx(0.7, abs=1e-8)
    assert eta == pytest.approx(0.7, abs=1e-6)


def test_cvar_small_alpha_is_mean():
    h = np.random.default_rng(1).normal(size=25)
    assert empirical_cvar(h, 1e-9)[0] == pytest.approx(h.mean(), abs=1e-6)


def test_cvar_uniform_grid_scan():
    h = np.random.default_rng(2).uniform(size=200)
    assert empirical_cvar(h, 0.95)[0] == pytest.approx(oracles.cvar_grid_scan(h, 0.95), abs=1e-4)


@pytest.mark.parametrize("bad", [([], 0.9), ([1.0], 0.0), ([1.0], 1.0)])
def test_cvar_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        empirical_cvar(*bad)


# ---------------------------------------------------------------- Wasserstein

def test_wasserstein_identity_and_translation():
    p = np.random.default_rng(3).normal(size=12)
    assert wasserstein_1d(p, p) == 0.0
    assert wasserstein_1d(p, p + 0.37) == pytest.approx(0.37, abs=1e-12)


def test_wasserstein_matches_transport_lp(rng):
    for _ in range(5):
        p, q = rng.normal(size=20), rng.normal(size=20)
        assert wasserstein_1d(p, q) == pytest.approx(oracles.transport_lp(p, q), abs=1e-8)


def test_wasserstein_unequal_sizes():
    p, q = np.array([0.0, 1.0]), np.array([0.0, 0.5, 1.0])
    assert wasserstein_1d(p, q) == pytest.approx(oracles.transport_lp(p, q), abs=1e-8)


# ---------------------------------------------------------------- case 1

def test_case1_three_samples():
    est = dr_cvar_case1(-1.0, THREE, AmbiguitySpec.for_samples(THREE))
    assert est.value == pytest.approx(-0.9, abs=1e-7)


def test_case1_zero_noise():
    zeros = SampleSet(np.zeros(5), lower=0.0, upper=0.0)
    assert dr_cvar_case1(0.42, zeros, AmbiguitySpec.for_samples(zeros)).value == pytest.approx(0.42, abs=1e-8)


def test_case1_is_max_shift(rng):
    for _ in range(50):
        s = SampleSet.draw(int(rng.integers(1, 40)), 0.0, 0.1, seed=int(rng.integers(1 << 30)))
        h = float(rng.uniform(-2, 2))
        est = dr_cvar_case1(h, s, AmbiguitySpec.for_samples(s, alpha=float(rng.uniform(0.5, 0.99))))
        assert est.value == pytest.approx(h + s.samples.max(), abs=1e-7)


# ---------------------------------------------------------------- case 2

def test_case2_degenerate_noise():
    zeros = SampleSet(np.zeros(4), lower=0.0, upper=0.0)
    est = dr_cvar_case2(-0.25, zeros, spec2(lower_bound=0.0, upper_bound=0.0))
    assert est.value == pytest.approx(-0.25, abs=1e-7)


def test_case2_three_samples_bruteforce():
    est = dr_cvar_case2(1.0, THREE, spec2())
    ref = oracles.case2_bruteforce(1.0, THREE.samples, 0.95, 1.0, -0.3, 0.3)
    assert est.value == pytest.approx(ref, abs=1e-4)
    assert est.value == pytest.approx(1.1, abs=1e-4)


def test_case2_large_lambda():
    w = np.random.default_rng(5).uniform(-0.5, 0.5, 8)
    s = SampleSet(w, lower=-2.0, upper=2.0)
    est = dr_cvar_case2(0.3, s, spec2(lambda_penalty=1e6, lower_bound=-2.0, upper_bound=2.0))
    ref = oracles.case2_bruteforce(0.3, w, 0.95, 1e6, -2.0, 2.0)
    assert est.value == pytest.approx(ref, abs=1e-3)
    # transport is prohibitive, so this is the plain sample CVaR of h + w
    assert est.value == pytest.approx(oracles.cvar_sorted_tail(0.3 + w, 0.95), abs=1e-3)


def test_case2_printed_formulation_runs():
    est = dr_cvar_case2(0.2, THREE, spec2(), formulation="printed")
    assert est.penalty_slacks.shape == (3,)
    with pytest.raises(ValueError):
        dr_cvar_case2(0.2, THREE, spec2(), formulation="bogus")


def test_case2_infeasible_falls_back_to_case1(monkeypatch):
    def boom(*a, **k):
        raise InfeasibleError("forced")

    monkeypatch.setattr(risk, "dr_cvar_case2", boom)
    est = dr_cvar(-1.0, THREE, spec2())
    assert est.fallback and est.case is Case.CASE1
    assert est.value == pytest.approx(-0.9, abs=1e-7)


# ---------------------------------------------------------------- gradients

def test_risk_gradient_circle_case1():
    ev = circle_barrier([2.0, 0.0], Obstacle((0.0, 0.0), 1.0))
    est, grad = risk_gradient(ev, THREE, AmbiguitySpec.for_samples(THREE))
    assert est.d_value_d_h == pytest.approx(1.0, abs=1e-7)
    np.testing.assert_allclose(grad, [-4.0, 0.0], atol=1e-6)


def test_risk_gradient_constant_barrier():
    _, grad = risk_gradient(BarrierEval(-1.0, np.zeros(3)), THREE, AmbiguitySpec.for_samples(THREE))
    np.testing.assert_array_equal(grad, 0.0)


def test_risk_gradient_case2_finite_differences(rng):
    ob = Obstacle((0.5, -0.2), 1.0)
    s = SampleSet.draw(8, 0.0, 0.1, seed=9)
    spec = AmbiguitySpec.for_samples(s, alpha=0.9, lambda_penalty=2.0, case=Case.CASE2)
    for _ in range(10):
        x = rng.uniform(-2, 2, 2)
        _, grad = risk_gradient(circle_barrier(x, ob), s, spec)
        fd = oracles.central_difference(lambda y: dr_cvar_case2(circle_barrier(y, ob).value, s, spec).value, x)[0]
        assert np.max(np.abs(grad - fd)) / max(1.0, np.max(np.abs(fd))) <= 1e-4


def test_sample_set_validation():
    with pytest.raises(ValueError):
        SampleSet(np.array([]))
    with pytest.raises(ValueError):
        SampleSet(np.array([0.5]), lower=-0.3, upper=0.3)
    s = SampleSet.draw(500, 0.1, 0.2, seed=1)
    assert s.samples.min() >= 0.1 - 0.6 and s.samples.max() <= 0.1 + 0.6
    np.testing.assert_array_equal(s.samples, SampleSet.draw(500, 0.1, 0.2, seed=1).samples)


@pytest.mark.parametrize("kw", [dict(alpha=1.0), dict(lambda_penalty=0.0), dict(lower_bound=1.0, upper_bound=0.0),
                                dict(wasserstein_radius=-1.0)])
def test_ambiguity_validation(kw):
    with pytest.raises(ValueError):
        AmbiguitySpec(**kw)


# ---------------------------------------------------------------- properties

seeds = st.integers(0, 2**32 - 1)


@given(seeds)
def test_cvar_monotone_in_alpha(seed):
    h = np.random.default_rng(seed).normal(size=30)
    vals = [empirical_cvar(h, a)[0] for a in (0.5, 0.9, 0.95, 0.99)]
    assert all(b >= a - 1e-8 for a, b in zip(vals, vals[1:]))


@given(seeds)
def test_dominance_chain(seed):
    rng = np.random.default_rng(seed)
    s = SampleSet.draw(int(rng.integers(2, 30)), 0.0, 0.1, seed=seed)
    h = float(rng.uniform(-1, 1))
    mean = h + s.samples.mean()
    cv = empirical_cvar(h + s.samples, 0.95)[0]
    c1 = dr_cvar_case1(h, s, AmbiguitySpec.for_samples(s)).value
    assert mean <= cv + 1e-8 and cv <= c1 + 1e-7
    assert c1 == pytest.approx(h + s.samples.max(), abs=1e-7)


@given(seeds, st.floats(-2, 2))
def test_translation_equivariance(seed, c):
    s = SampleSet.draw(6, 0.0, 0.1, seed=seed)
    spec1 = AmbiguitySpec.for_samples(s)
    specc = AmbiguitySpec.for_samples(s, case=Case.CASE2)
    assert dr_cvar_case1(0.1 + c, s, spec1).value == pytest.approx(dr_cvar_case1(0.1, s, spec1).value + c, abs=1e-7)
    assert dr_cvar_case2(0.1 + c, s, specc).value == pytest.approx(dr_cvar_case2(0.1, s, specc).value + c, abs=1e-6)


@given(seeds, st.sampled_from([Case.CASE1, Case.CASE2]))
def test_sensitivity_is_dual_sum(seed, case):
    rng = np.random.default_rng(seed)
    s = SampleSet.draw(6, 0.0, 0.1, seed=seed)
    spec = AmbiguitySpec.for_samples(s, case=case)
    h = float(rng.uniform(-1, 1))
    est = dr_cvar(h, s, spec)
    # rows whose right-hand side carries -h: every hinge row (the trailing N are the L/s >= 0 rows)
    n_h = est.duals.size - s.size
    assert est.d_value_d_h == pytest.approx(est.duals[:n_h].sum(), abs=1e-9)
    fd = (dr_cvar(h + 1e-5, s, spec).value - dr_cvar(h - 1e-5, s, spec).value) / 2e-5
    assert est.d_value_d_h == pytest.approx(fd, abs=1e-4)


@given(seeds)
def test_wasserstein_is_metric(seed):
    rng = np.random.default_rng(seed)
    p, q, r = (rng.normal(size=int(rng.integers(1, 15))) for _ in range(3))
    assert wasserstein_1d(p, q) == wasserstein_1d(q, p)
    assert wasserstein_1d(p, r) <= wasserstein_1d(p, q) + wasserstein_1d(q, r) + 1e-9
