"""Command-line entry point: ``drcbf run | compare | selftest``.

Exit codes: 0 success, 1 selftest failure, 2 unreadable or invalid
scenario, 3 simulation abort (controller fallback cap exceeded or a solver
error).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from pydantic import ValidationError

from . import __version__
from .qp import BACKEND, QpError
from .sim import ScenarioConfig, Termination, compare_controllers, run_scenario, summarize

log = logging.getLogger("drcbf.cli")

EXIT_OK, EXIT_SELFTEST, EXIT_INVALID, EXIT_ABORT = 0, 1, 2, 3


class ScenarioError(Exception):
    """Scenario could not be read or validated; message is user-facing."""


def bundled_scenarios() -> list[str]:
    root = resources.files("drcbf") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _resolve(path: str) -> Path | resources.abc.Traversable:
    p = Path(path)
    if p.exists():
        return p
    name = p.name[:-5] if p.name.endswith(".json") else p.name
    cand = resources.files("drcbf") / "scenarios" / f"{name}.json"
    if str(path) == p.name and cand.is_file():
        return cand
    raise ScenarioError(f"{path}: no such file (bundled scenarios: {', '.join(bundled_scenarios())})")


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        where = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"{where}: {e['msg']}")
    return "; ".join(lines)


def load_scenario(path: str) -> ScenarioConfig:
    """Read a scenario file, or the ``config`` block of a run manifest."""
    src = _resolve(path)
    try:
        data = json.loads(src.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if isinstance(data, dict) and "config" in data and "tool_version" in data:
        data = data["config"]
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(f"{path}: {_format_validation(exc)}") from exc


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ScenarioError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    kw = {
        "controller": getattr(args, "controller", None),
        "risk.case": args.case,
        "risk.alpha": args.alpha,
        "risk.lambda_penalty": args.lam,
        "noise.n_samples": args.samples,
        "noise.seed": args.seed,
        "dt": args.dt,
        "horizon": args.horizon,
    }
    kw.update(_parse_set(args.set))
    try:
        return cfg.with_overrides(**kw)
    except ValidationError as exc:
        raise ScenarioError(f"override: {_format_validation(exc)}") from exc


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _manifest(cfg: ScenarioConfig, command: str, outputs: dict, started: str | None, extra=None) -> dict:
    """Everything needed to replay the run. Wall-clock fields are null unless
    ``--timing`` was given, so repeated runs write identical manifests."""
    m = {
        "tool_version": __version__,
        "command": command,
        "qp_backend": BACKEND,
        "seed": cfg.noise.seed,
        "config": cfg.model_dump(mode="json"),
        "outputs": outputs,
        "started_utc": started,
        "finished_utc": _now() if started else None,
    }
    if extra:
        m.update(extra)
    return m


def _fmt_clear(vals) -> str:
    return "[" + ", ".join(f"{v:.3f}" for v in vals) + "]"


def cmd_run(args) -> int:
    started = _now() if args.timing else None
    cfg = apply_overrides(load_scenario(args.scenario), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        traj = run_scenario(cfg)
    except QpError as exc:
        print(f"error: simulation aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    metrics = summarize(cfg, traj)
    paths = {"trajectory": "trajectory.csv", "metrics": "metrics.json", "manifest": "manifest.json"}
    traj.write_csv(out / paths["trajectory"], timing=args.timing)
    _write_json(out / paths["metrics"], {"scenario": cfg.name, "plant": cfg.plant, "controller": cfg.controller,
                                         "seed": cfg.noise.seed, "steps": len(traj),
                                         **metrics.to_dict(timing=args.timing)})
    extra = {"median_solve_ms": metrics.median_solve_ms if args.timing else None,
             "mean_solve_ms": metrics.mean_solve_ms if args.timing else None}
    _write_json(out / paths["manifest"], _manifest(cfg, "run", paths, started, extra))
    print(f"{cfg.name} {cfg.controller}: {metrics.termination} after {len(traj)} steps, "
          f"min clearance {_fmt_clear(metrics.min_clearance)}, violation rate {metrics.violation_rate:.4f}, "
          f"fallbacks {metrics.fallback_steps}")
    if traj.termination is Termination.INFEASIBLE_FALLBACK:
        print("error: simulation aborted: controller fallback cap exceeded", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def cmd_compare(args) -> int:
    started = _now() if args.timing else None
    cfg = apply_overrides(load_scenario(args.scenario), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result, logs = compare_controllers(cfg)
    except QpError as exc:
        print(f"error: simulation aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    paths = {"cbf": "cbf.csv", "drcbf": "drcbf.csv", "comparison": "comparison.json", "manifest": "manifest.json"}
    for ctrl, traj in logs.items():
        traj.write_csv(out / paths[ctrl], timing=args.timing)
    _write_json(out / paths["comparison"], {"scenario": cfg.name, "plant": cfg.plant, "seed": cfg.noise.seed,
                                            **result.to_dict(timing=args.timing)})
    _write_json(out / paths["manifest"], _manifest(cfg, "compare", paths, started))
    delta = result.delta.get("min_clearance", [])
    print(f"{cfg.name}: clearance cbf {_fmt_clear(result.cbf.min_clearance)} drcbf "
          f"{_fmt_clear(result.drcbf.min_clearance)} delta {_fmt_clear(delta)}")
    aborted = any(t.termination is Termination.INFEASIBLE_FALLBACK for t in logs.values())
    return EXIT_ABORT if aborted else EXIT_OK


def cmd_selftest(args) -> int:
    from . import selftest

    return EXIT_OK if selftest.run(quick=args.quick, seed=args.seed) else EXIT_SELFTEST


def _add_common(p: argparse.ArgumentParser, controller: bool) -> None:
    p.add_argument("--scenario", required=True, help="scenario JSON path, bundled name, or run manifest")
    if controller:
        p.add_argument("--controller", choices=["cbf", "drcbf"])
    p.add_argument("--case", type=int, choices=[1, 2], help="DR-CVaR reformulation")
    p.add_argument("--alpha", type=float, help="CVaR level")
    p.add_argument("--lambda", dest="lam", type=float, help="Wasserstein penalty")
    p.add_argument("--samples", type=int, help="number of noise samples")
    p.add_argument("--seed", type=int, help="noise sample seed")
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted config override, value parsed as JSON (repeatable)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock times in CSV, metrics and manifest (outputs then differ run to run)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drcbf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"drcbf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="simulate one controller on a scenario")
    _add_common(p, controller=True)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare", help="run cbf and drcbf on the same scenario")
    _add_common(p, controller=False)
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("selftest", help="check solvers against brute-force oracles")
    p.add_argument("--quick", action="store_true", help="fewer random instances")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("DRCBF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
