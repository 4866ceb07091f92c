"""Command-line front end.

    infoplan quantify     --config run.yaml --out results/
    infoplan plan schedule|trajectory|steer|compare --config run.yaml
    infoplan field        --config run.yaml
    infoplan oracle-check --config run.yaml

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import oracle
from .chain import ChainError
from .core import DEFAULT_STEP, DivergenceError, NumericalConsistencyError, TimeGrid, sym
from .mi import InfoReport, mi_pointwise_smoother, mi_windowed
from .planners import (
    PlanningBudgetError,
    compare_strategies,
    field_map,
    knot_profile,
    HeadingPath,
    evaluate,
    schedule_exhaustive,
    steer_rollout,
    trajectory_optimize,
    steer_knots,
)
from .scenarios import HOURS_PER_MODEL_TIME, ScenarioError, build_singer, build_weather
from .smoother import p0_given
from .system import LinearGaussianSystem, SensingModel, VerificationSpec

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
MAX_ORACLE_ROWS = 4000


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------------
# configuration

def _at(cfg: dict, path: str, default: Any = ..., kind=None):
    node = cfg
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            if default is ...:
                raise ConfigError(f"{path}: required")
            return default
        node = node[key]
    if kind is not None and node is not None:
        try:
            if kind is float:
                node = float(node)
            elif kind is int:
                if isinstance(node, bool) or float(node) != int(node):
                    raise ValueError
                node = int(node)
            elif kind is bool and not isinstance(node, bool):
                raise ValueError
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: expected {kind.__name__}, got {node!r}") from None
    return node


def _matrix(cfg: dict, path: str, default: Any = ...) -> Optional[np.ndarray]:
    raw = _at(cfg, path, default)
    if raw is None:
        return None
    try:
        M = np.atleast_2d(np.asarray(raw, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a row-major numeric matrix") from None
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ConfigError(f"{path}: expected a finite 2-D matrix")
    return M


@dataclass
class RunConfig:
    raw: dict
    scenario: str
    system: LinearGaussianSystem
    sensing: Any
    spec: VerificationSpec
    problem: Any
    tau: float
    step: float
    seed: int
    K_max: int = 6
    units: str = "model_time"
    extras: dict = field(default_factory=dict)


def _check_grid(values: dict, step: float):
    for name, t in values.items():
        if t is None:
            continue
        if t < 0:
            raise ConfigError(f"{name}: times must be non-negative")
        try:
            TimeGrid(0.0, t, step)
        except ValueError:
            raise ConfigError(f"{name}={t} is not a multiple of solver.step={step}") from None


def load_config(path: Optional[str], seed: Optional[int] = None,
                step: Optional[float] = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: not valid YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    return build_config(raw, seed, step)


def build_config(raw: dict, seed: Optional[int] = None, step: Optional[float] = None) -> RunConfig:
    seed = int(seed if seed is not None else _at(raw, "seed", 0, int))
    step = float(step if step is not None else _at(raw, "solver.step", DEFAULT_STEP, float))
    if not step > 0:
        raise ConfigError("solver.step: must be positive")
    K_max = _at(raw, "solver.K_max", 6, int)
    name = _at(raw, "scenario.name", "literal")
    params = _at(raw, "scenario.params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("scenario.params: expected a mapping")
    units = "model_time"
    try:
        if name == "singer":
            system, sensing, spec, problem = build_singer(params, seed)
            tau = _at(raw, "tau", problem.tau, float)
            problem.tau = tau
        elif name == "weather":
            system, sensing, spec, problem = build_weather(params, seed)
            tau = _at(raw, "tau_hr", problem.tau * HOURS_PER_MODEL_TIME, float) / HOURS_PER_MODEL_TIME
            problem.tau = tau
        elif name == "literal":
            system, sensing, spec, problem, tau = _literal(raw)
        else:
            raise ConfigError(f"scenario.name: unknown scenario {name!r}")
    except (ScenarioError, ValueError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"scenario: {exc}") from None
    if "spec" in raw and name != "literal":
        spec = _spec(raw, system.n_X)
    end = spec.T if spec.kind == "point" else spec.T_i
    if not 0 <= tau <= end:
        raise ConfigError(f"tau: must lie in [0, {end}] for this verification spec")
    if name != "weather":
        _check_grid({"tau": tau, "spec.T": spec.T, "spec.T_i": spec.T_i, "spec.T_f": spec.T_f}, step)
        if spec.kind == "window":
            _check_grid({"spec.T_f - spec.T_i": spec.T_f - spec.T_i}, step)
    return RunConfig(raw, name, system, sensing, spec, problem, tau, step, seed, K_max, units)


def _spec(raw: dict, n_X: int) -> VerificationSpec:
    kind = _at(raw, "spec.kind", "window")
    M = _matrix(raw, "spec.M", None)
    if M is None:
        M = np.eye(n_X)
    if M.shape[1] != n_X:
        raise ConfigError(f"spec.M: expected {n_X} columns, got {M.shape[1]}")
    try:
        if kind == "point":
            return VerificationSpec.point(M, _at(raw, "spec.T", kind=float))
        if kind == "window":
            M_f = _matrix(raw, "spec.M_f", None)
            T_i, T_f = _at(raw, "spec.T_i", kind=float), _at(raw, "spec.T_f", kind=float)
            if M_f is not None:
                return VerificationSpec.linear_blend(M, M_f, T_i, T_f)
            return VerificationSpec.window(M, T_i, T_f)
    except ValueError as exc:
        raise ConfigError(f"spec: {exc}") from None
    raise ConfigError(f"spec.kind: expected 'point' or 'window', got {kind!r}")


def _literal(raw: dict):
    A = _matrix(raw, "scenario.A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigError("scenario.A: must be square")
    B = _matrix(raw, "scenario.B", np.eye(n).tolist())
    if B.shape[0] != n:
        raise ConfigError(f"scenario.B: expected {n} rows")
    Sigma_W = _matrix(raw, "scenario.Sigma_W", np.eye(B.shape[1]).tolist())
    P0 = _matrix(raw, "scenario.P0")
    C = _matrix(raw, "scenario.C")
    Sigma_N = _matrix(raw, "scenario.Sigma_N", np.eye(C.shape[0]).tolist())
    if C.shape[1] != n:
        raise ConfigError(f"scenario.C: expected {n} columns")
    try:
        system = LinearGaussianSystem(A, B, Sigma_W, P0)
        sensing = SensingModel(C, Sigma_N)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"scenario: {exc}") from None
    spec = _spec(raw, n)
    tau = _at(raw, "tau", kind=float)
    return system, sensing, spec, None, tau


def _decision(cfg: RunConfig):
    """Sensing decision for quantify and oracle-check."""
    raw = cfg.raw
    if cfg.scenario == "singer":
        sched = _at(raw, "decision.schedule", None)
        p = cfg.problem
        if sched is None:
            sched = [list(range(p.m_s))] * p.m_tau
        if len(sched) < 1:
            raise ConfigError("decision.schedule: needs at least one interval")
        for k, s in enumerate(sched):
            if not s or any(int(i) != i or not 0 <= i < p.n_S for i in s):
                raise ConfigError(f"decision.schedule[{k}]: sensor indices must lie in [0, {p.n_S})")
        _check_grid({"tau / intervals": cfg.tau / len(sched)}, cfg.step)
        return [tuple(sorted(int(i) for i in s)) for s in sched]
    if cfg.scenario == "weather":
        knots = _at(raw, "decision.headings", [0.0] * (cfg.problem.segments + 1))
        return HeadingPath(cfg.problem.start, cfg.problem.speed, knot_profile(knots, cfg.tau),
                           cfg.tau, cfg.step)
    return None


# ----------------------------------------------------------------------------
# artifact writers

def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_json(path: Path, payload: dict):
    path.write_text(json.dumps(_clean(payload), sort_keys=True, indent=2) + "\n")


def write_csv(path: Path, header: list, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in row])


def _trace_rows(report: InfoReport):
    return zip(report.times, report.onthefly, report.rate)


def audit(report: InfoReport, tol: float = 1e-9) -> dict:
    inc = np.diff(report.onthefly)
    gap = report.final.P_X - report.final.Q_X
    return {
        "onthefly_monotone": bool(inc.size == 0 or inc.min() >= -tol),
        "min_increment": float(inc.min()) if inc.size else 0.0,
        "Q_below_P": bool(np.linalg.eigvalsh(sym(gap)).min() >= -tol * max(1.0, np.trace(report.final.P_X))),
    }


# ----------------------------------------------------------------------------
# commands

def cmd_quantify(cfg: RunConfig, out: Path, check: bool = False) -> int:
    decision = _decision(cfg)
    P0V = p0_given(cfg.system, cfg.spec, cfg.step, cfg.K_max)
    report = evaluate(cfg.system, cfg.sensing, decision, cfg.spec, cfg.tau, cfg.step, P0V)
    payload = {
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "spec": cfg.spec.kind,
        "tau": cfg.tau,
        "total_mi": report.total_mi,
        "J0": report.J0,
        "units": {"total_mi": "nats", "J0": "nats", "tau": "model_time"},
    }
    code = EXIT_OK
    if check:
        payload["audit"] = audit(report)
        if not all(v for k, v in payload["audit"].items() if isinstance(v, bool)):
            code = EXIT_NUMERIC
    write_json(out / "report.json", payload)
    write_csv(out / "info_trace.csv", ["t", "mi", "rate"], _trace_rows(report))
    return code


def _plan_payload(cfg, mode, res, extra=None):
    payload = {
        "mode": mode,
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "decision": res.decision,
        "objective": res.objective,
        "gains": res.gains,
        "evaluations": res.evaluations,
        "units": {"objective": "nats", "gains": "nats", "decision": "radians" if mode != "schedule" else "sensor_index"},
    }
    payload.update(extra or {})
    return payload


def cmd_plan(cfg: RunConfig, mode: str, out: Path, threads: Optional[int] = None,
             cross_exhaustive: bool = False) -> int:
    raw = cfg.raw
    if mode == "schedule":
        if cfg.scenario != "singer":
            raise ConfigError("plan schedule: needs scenario.name = singer")
        _check_grid({"tau / m_tau": cfg.tau / cfg.problem.m_tau}, cfg.step)
        res = schedule_exhaustive(cfg.system, cfg.sensing, cfg.spec, cfg.problem, cfg.step,
                                  threads, cross_exhaustive=cross_exhaustive)
        write_json(out / "plan.json", _plan_payload(cfg, mode, res))
        write_csv(out / "schedule.csv", ["interval", "sensors"],
                  [(k, " ".join(str(i) for i in s)) for k, s in enumerate(res.decision)])
        return EXIT_OK
    if cfg.scenario != "weather":
        raise ConfigError(f"plan {mode}: needs scenario.name = weather")
    multistart = _at(raw, "solver.multistart", 36, int)
    budget = _at(raw, "solver.budget", 200, int)
    if multistart < 1 or budget < 1:
        raise ConfigError("solver.multistart and solver.budget must be at least 1")
    units_path = {"t": "model_time", "x": "grid_units", "y": "grid_units", "heading": "radians"}
    if mode == "compare":
        results = compare_strategies(cfg.system, cfg.sensing, cfg.spec, cfg.problem, multistart,
                                     cfg.step, budget, threads)
        for name, (res, iwf_score) in results.items():
            payload = _plan_payload(cfg, name, res, {"iwf_objective": iwf_score})
            payload["units"]["iwf_objective"] = "nats"
            write_json(out / f"plan_{name}.json", payload)
            write_csv(out / f"path_{name}.csv", list(units_path), res.path)
        return EXIT_OK
    P0V = p0_given(cfg.system, cfg.spec, cfg.step, cfg.K_max)
    steer = steer_rollout(cfg.system, cfg.sensing, cfg.spec, cfg.problem, cfg.step, P0V)
    if mode == "steer":
        res = steer
    elif mode == "trajectory":
        res = trajectory_optimize(cfg.system, cfg.sensing, cfg.spec, cfg.problem, multistart,
                                  cfg.step, budget, threads, P0V,
                                  initial_knots=[steer_knots(steer, cfg.problem)])
    else:
        raise ConfigError(f"plan: unknown mode {mode!r}")
    write_json(out / "plan.json", _plan_payload(cfg, mode, res))
    write_csv(out / "path.csv", list(units_path), res.path)
    return EXIT_OK


def _lattice(raw: dict, path: str):
    spec = _at(raw, path)
    if not (isinstance(spec, list) and len(spec) == 3):
        raise ConfigError(f"{path}: expected [min, max, count]")
    lo, hi, n = float(spec[0]), float(spec[1]), int(spec[2])
    if n < 1 or hi < lo:
        raise ConfigError(f"{path}: need count >= 1 and max >= min")
    return np.linspace(lo, hi, n)


def cmd_field(cfg: RunConfig, out: Path) -> int:
    if cfg.scenario != "weather":
        raise ConfigError("field: needs a spatial sensing scenario (scenario.name = weather)")
    raw = cfg.raw
    xs, ys = _lattice(raw, "field.x"), _lattice(raw, "field.y")
    hours = _at(raw, "field.times_hr", [0.0])
    decision = _decision(cfg) if "decision" in raw else None
    P0V = p0_given(cfg.system, cfg.spec, cfg.step, cfg.K_max)
    for h in hours:
        t = float(h) / HOURS_PER_MODEL_TIME
        if not 0 <= t <= cfg.tau:
            raise ConfigError(f"field.times_hr: {h} outside the sensing horizon")
        F = field_map(cfg.system, cfg.sensing, cfg.spec, xs, ys, t, decision, cfg.step, P0V)
        rows = [(float(x), float(y), float(F[i, j])) for i, y in enumerate(ys) for j, x in enumerate(xs)]
        write_csv(out / f"field_t{_fmt_time(h)}.csv", ["x", "y", "rate"], rows)
    return EXIT_OK


def _fmt_time(h) -> str:
    return f"{float(h):g}"


def cmd_oracle_check(cfg: RunConfig, out: Path) -> int:
    raw = cfg.raw
    dts = [float(d) for d in _at(raw, "oracle.dts", [4e-3, 2e-3, 1e-3])]
    m = _at(raw, "oracle.m", 200, int)
    tol = _at(raw, "oracle.tol", 0.01, float)
    max_rows = _at(raw, "oracle.max_rows", MAX_ORACLE_ROWS, int)
    decision = _decision(cfg)
    segs = (cfg.sensing.segments(decision, cfg.tau) if hasattr(cfg.sensing, "segments")
            else list(cfg.sensing))
    n_v = cfg.spec.n_V * (1 if cfg.spec.kind == "point" else m)
    n_z = segs[0].Sigma_N.shape[0] if segs else 0
    need = n_v + n_z * int(round(cfg.tau / min(dts)))
    if need > max_rows:
        raise ConfigError(
            f"oracle: joint covariance needs {need} rows, cap is {max_rows}; "
            f"increase the smallest dt to {cfg.tau * n_z / max(max_rows - n_v, 1):.3g}, "
            "reduce oracle.m, or shorten tau")
    P0V = p0_given(cfg.system, cfg.spec, cfg.step, cfg.K_max)
    if cfg.spec.kind == "window":
        cont = mi_windowed(cfg.system, segs, None, cfg.spec, cfg.tau, cfg.step, P0V).total_mi
    else:
        cont = mi_pointwise_smoother(cfg.system, segs, None, cfg.spec, cfg.tau, cfg.step, P0V).total_mi
    Pd = oracle.p0_given_samples(cfg.system, cfg.spec, m)
    p0_err = float(np.linalg.norm(P0V - Pd) / np.linalg.norm(Pd))
    rows = []
    for dt in sorted(dts, reverse=True):
        d = oracle.brute_mi(cfg.system, segs, cfg.spec, cfg.tau, dt, m, max_rows=max_rows)
        rows.append({"dt": dt, "discrete": d,
                     "rel_error": abs(d - cont) / abs(d) if d != 0 else abs(cont)})
    errs = [r["rel_error"] for r in rows]
    payload = {
        "continuous": cont,
        "sweep": rows,
        "monotone_decay": bool(all(b <= a for a, b in zip(errs[:-1], errs[1:]))),
        "tolerance": tol,
        "pass": bool(errs[-1] <= tol),
        "m": m,
        "p0_given_V_rel_error": p0_err,
        "units": {"continuous": "nats", "discrete": "nats", "dt": "model_time",
                  "rel_error": "dimensionless", "p0_given_V_rel_error": "dimensionless"},
    }
    write_json(out / "oracle.json", payload)
    return EXIT_OK


# ----------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--step", type=float, help="override solver.step")
    common.add_argument("--threads", type=int, help="worker threads (default INFOPLAN_THREADS or 1)")
    common.add_argument("--out", default=".", help="output directory")
    p = argparse.ArgumentParser(prog="infoplan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    q = sub.add_parser("quantify", parents=[common], help="MI of a fixed decision")
    q.add_argument("--audit", action="store_true", help="check monotonicity and Q <= P_X")
    pl = sub.add_parser("plan", parents=[common], help="optimize a sensing decision")
    pl.add_argument("mode", choices=["schedule", "trajectory", "steer", "compare"])
    pl.add_argument("--cross-exhaustive", action="store_true",
                    help="search all interval combinations (tiny instances only)")
    sub.add_parser("field", parents=[common], help="information potential field")
    sub.add_parser("oracle-check", parents=[common], help="compare against the discrete oracle")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = load_config(args.config, args.seed, args.step)
        out.mkdir(parents=True, exist_ok=True)
        threads = args.threads
        if threads is None and "INFOPLAN_THREADS" in os.environ:
            threads = int(os.environ["INFOPLAN_THREADS"])
        if args.command == "quantify":
            return cmd_quantify(cfg, out, args.audit)
        if args.command == "plan":
            return cmd_plan(cfg, args.mode, out, threads, args.cross_exhaustive)
        if args.command == "field":
            return cmd_field(cfg, out)
        return cmd_oracle_check(cfg, out)
    except (ConfigError, ChainError, PlanningBudgetError, oracle.OracleSizeError) as exc:
        print(f"infoplan: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NumericalConsistencyError, np.linalg.LinAlgError) as exc:
        print(f"infoplan: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
