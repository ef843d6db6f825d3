"""Compiled vs numpy QP kernel timings: ``python -m drcbf.bench``.

Times the same problems on every available backend and reports the median
per call plus the largest primal difference between backends.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from . import qp, risk


def _case1_lp(n_samples: int) -> qp.QpProblem:
    """The sample-based worst-case CVaR LP the controller solves every step."""
    samples = risk.SampleSet.draw(n_samples, 0.0, 0.1, seed=0)
    n = n_samples
    cost = np.concatenate([[1.0], np.full(n, 1.0 / (0.05 * n))])
    eye = np.eye(n)
    G = np.vstack([np.hstack([-np.ones((n, 1)), -eye]), np.hstack([-np.ones((n, 1)), np.zeros((n, n))]),
                   np.hstack([np.zeros((n, 1)), -eye])])
    h = np.concatenate([-samples.samples + 0.5, -samples.samples + 0.5, np.zeros(n)])
    return qp.QpProblem(np.zeros((n + 1, n + 1)), cost, ineq_matrix=G, ineq_rhs=h)


def _controller_qp() -> qp.QpProblem:
    """Dubins CLF-QP shape: three controls plus a relaxation, boxed controls."""
    P = np.diag([2.0, 2.0, 2.0, 2e4])
    q = np.zeros(4)
    G = np.array([[0.3, -0.2, 0.0, -1.0], [-1.4, -0.9, 0.0, 0.0]])
    h = np.array([-1.2, 0.4])
    inf = np.inf
    return qp.QpProblem(P, q, ineq_matrix=G, ineq_rhs=h,
                        lower=np.array([-1.0, -1.0, -1.0, -inf]), upper=np.array([1.0, 1.0, 1.0, inf]))


def _random_qp(n: int, r: int, seed: int) -> qp.QpProblem:
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    G = rng.normal(size=(r, n))
    h = G @ rng.normal(size=n) + np.abs(rng.normal(size=r))
    return qp.QpProblem(M @ M.T + np.eye(n), rng.normal(size=n), ineq_matrix=G, ineq_rhs=h)


def _time(fn, repeat: int) -> float:
    fn()  # warm-up
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs) * 1e3


def problems(n_samples: int = 20) -> dict:
    return {
        f"case-1 LP (N={n_samples})": (_case1_lp(n_samples), qp.solve_lp),
        "controller QP (4 vars)": (_controller_qp(), qp.solve_qp),
        "random QP (30 vars, 60 rows)": (_random_qp(30, 60, 1), qp.solve_qp),
    }


def run(repeat: int = 200, n_samples: int = 20) -> list[dict]:
    rows = []
    for name, (prob, solver) in problems(n_samples).items():
        row = {"problem": name}
        primal = {}
        for backend in qp.available_backends():
            row[backend] = _time(lambda: solver(prob, backend=backend), repeat)
            primal[backend] = solver(prob, backend=backend).primal
        vals = list(primal.values())
        row["max_primal_diff"] = max((float(np.max(np.abs(v - vals[0]))) for v in vals[1:]), default=0.0)
        rows.append(row)
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(prog="python -m drcbf.bench", description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--samples", type=int, default=20)
    args = ap.parse_args(argv)
    backends = qp.available_backends()
    print(f"backends: {', '.join(backends)} (default {qp.BACKEND}); median ms per solve")
    header = f"{'problem':32s}" + "".join(f"{b:>10s}" for b in backends) + f"{'speedup':>10s}{'max |dz|':>12s}"
    print(header)
    for row in run(args.repeat, args.samples):
        line = f"{row['problem']:32s}" + "".join(f"{row[b]:10.3f}" for b in backends)
        speed = row["python"] / row["cython"] if "cython" in row else float("nan")
        print(line + f"{speed:10.1f}x{row['max_primal_diff']:12.1e}")


if __name__ == "__main__":  # pragma: no cover
    main()
