"""Oracle self-checks run by ``drcbf selftest``.

Each suite compares the library against an independent reference from
:mod:`drcbf.oracles` (or finite differences) and returns a list of failure
messages; an empty list is a pass. Library functions are looked up through
their modules at call time so tests can patch them.
"""
from __future__ import annotations

import numpy as np

from . import barrier, diffopt, oracles, plants, qp, risk


def _rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def suite_cvar(rng, quick: bool) -> list[str]:
    """Sample-CVaR LP vs sorted tail; Case-2 LP vs a brute-force scan in η."""
    fails = []
    for trial in range(5 if quick else 40):
        n = int(rng.integers(1, 30))
        alpha = float(rng.uniform(0.5, 0.99))
        h = rng.normal(size=n)
        got, _ = risk.empirical_cvar(h, alpha)
        want = oracles.cvar_sorted_tail(h, alpha)
        if abs(got - want) > 1e-6:
            fails.append(f"sample cvar trial {trial}: {got!r} vs {want!r}")
    for trial in range(1 if quick else 4):
        w = np.clip(rng.normal(0.0, 0.1, size=6), -0.3, 0.3)
        h_val = float(rng.uniform(-1.0, 1.0))
        spec = risk.AmbiguitySpec(alpha=0.9, lambda_penalty=float(rng.uniform(0.5, 3.0)),
                                  lower_bound=-0.3, upper_bound=0.3, case=risk.Case.CASE2)
        est = risk.dr_cvar(h_val, risk.SampleSet(w, lower=-0.3, upper=0.3), spec)
        want = oracles.case2_bruteforce(h_val, w, spec.alpha, spec.lambda_penalty, -0.3, 0.3)
        if abs(est.value - want) > 1e-5:
            fails.append(f"case-2 trial {trial}: {est.value!r} vs {want!r}")
    return fails


def suite_gradients(rng, quick: bool) -> list[str]:
    """Risk, ψ and QP-value gradients vs central differences."""
    fails = []
    obstacle = plants.Obstacle((0.0, 0.0), 1.0)
    samples = risk.SampleSet.draw(10, 0.0, 0.1, seed=3)
    for trial in range(2 if quick else 6):
        case = risk.Case.CASE1 if trial % 2 == 0 else risk.Case.CASE2
        spec = risk.AmbiguitySpec.for_samples(samples, alpha=0.9, lambda_penalty=2.0, case=case)
        x = rng.uniform(-2.0, 2.0, size=2)
        _, grad = risk.risk_gradient(plants.circle_barrier(x, obstacle), samples, spec)
        fd = oracles.central_difference(
            lambda y: risk.dr_cvar(plants.circle_barrier(y, obstacle).value, samples, spec).value, x)[0]
        if _rel_err(grad, fd) > 1e-4:
            fails.append(f"risk gradient trial {trial} ({case.value}): {grad} vs {fd}")

    model = plants.quad_model()
    k1 = barrier.KappaFn(3.0)
    for trial in range(2 if quick else 6):
        x = np.concatenate([rng.uniform(-2, 2, 2), rng.uniform(-0.5, 0.5, 1), rng.uniform(-1, 1, 3)])

        def psi(y):
            return barrier.hocbf_psi(model, plants.circle_barrier(y[:2], obstacle, 6), y, k1).value

        got = barrier.hocbf_psi(model, plants.circle_barrier(x[:2], obstacle, 6), x, k1).gradient
        fd = oracles.central_difference(psi, x)[0]
        if _rel_err(got, fd) > 1e-5:
            fails.append(f"psi gradient trial {trial}: {got} vs {fd}")

    for trial in range(2 if quick else 6):
        n, r = 3, 5
        M = rng.normal(size=(n, n))
        G = rng.normal(size=(r, n))
        h0 = np.abs(rng.normal(size=r)) + 0.1
        q = rng.normal(size=n)
        prob = qp.QpProblem(M @ M.T + np.eye(n), q, ineq_matrix=G, ineq_rhs=h0)
        sol = qp.solve_qp(prob, tol=1e-11)
        try:
            got = diffopt.value_gradient(prob, sol, diffopt.ParamMap.ineq_rhs(np.eye(r))).d_value
        except qp.QpError:
            continue    # degenerate draw
        fd = oracles.central_difference(
            lambda hh: qp.solve_qp(prob.with_ineq_rhs(hh), tol=1e-11).objective_value, h0, 1e-6)[0]
        if _rel_err(got, fd) > 1e-4:
            fails.append(f"qp value gradient trial {trial}: {got} vs {fd}")
    return fails


def suite_qp(rng, quick: bool) -> list[str]:
    """Random strictly convex QPs on every backend: KKT residual and active-set solution."""
    fails = []
    for backend in qp.available_backends():
        for trial in range(4 if quick else 25):
            n, r = int(rng.integers(1, 5)), int(rng.integers(1, 7))
            M = rng.normal(size=(n, n))
            Q = M @ M.T + 0.5 * np.eye(n)
            q = rng.normal(size=n)
            G = rng.normal(size=(r, n))
            h = G @ rng.normal(size=n) + np.abs(rng.normal(size=r))   # strictly feasible
            prob = qp.QpProblem(Q, q, ineq_matrix=G, ineq_rhs=h)
            sol = qp.solve_qp(prob, backend=backend)
            res = qp.kkt_residual(prob, sol)
            z_ref, _ = oracles.qp_active_set_enumeration(Q, q, G, h)
            if not sol.optimal or res > 1e-6:
                fails.append(f"{backend} trial {trial}: status {sol.status.value}, kkt {res:.2e}")
            elif _rel_err(sol.primal, z_ref) > 1e-6:
                fails.append(f"{backend} trial {trial}: primal off by {_rel_err(sol.primal, z_ref):.2e}")
    return fails


SUITES = {
    "cvar-sorted-tail": suite_cvar,
    "finite-difference-gradients": suite_gradients,
    "qp-kkt-residuals": suite_qp,
}


def run(quick: bool = False, seed: int = 0, out=print) -> bool:
    """Run every suite, print one line each, return True iff all pass."""
    ok = True
    for name, fn in SUITES.items():
        try:
            fails = fn(np.random.default_rng(seed), quick)
        except Exception as exc:  # noqa: BLE001 - a crash is a failed suite
            fails = [f"raised {type(exc).__name__}: {exc}"]
        out(f"{'PASS' if not fails else 'FAIL'} {name}")
        for msg in fails[:5]:
            out(f"    {msg}")
        ok &= not fails
    return ok
