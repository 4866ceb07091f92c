"""Planning on top of the information flows.

Sensor-subset scheduling over decision intervals, the gradient-ascent
steering law for a moving sensor, a multistart pattern-search trajectory
optimizer, and maps of the instantaneous information rate over space.
"""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DEFAULT_STEP, STIFF_LIMIT, TimeGrid, rk4_step, sym
from .mi import (
    FlowState,
    InfoReport,
    advance,
    flow_rhs,
    information_flow,
    onthefly_mi_cov,
    rate_from_pi,
    rate_matrix_cov,
)
from .smoother import p0_given
from .system import SensingSegment, VerificationSpec

CANDIDATE_BUDGET = 10 ** 6
CROSS_BUDGET = 10 ** 4
TIE_RTOL = 1e-12
SCREEN_FACTOR = 10  # coarse-grid multiplier for the first pass of the subset search
REFINE = 32  # leaders re-scored at full resolution
BATCH = 512  # candidates integrated together; small enough to stay in cache


class PlanningBudgetError(ValueError):
    pass


@dataclass
class ScheduleProblem:
    n_S: int
    m_s: int
    m_tau: int
    tau: float
    sensor_locations: Optional[np.ndarray] = None
    candidates: Optional[list] = None  # per-interval candidate sets; default all m_s-subsets

    def __post_init__(self):
        if not 1 <= self.m_s <= self.n_S:
            raise ValueError("need 1 <= m_s <= n_S")
        if self.m_tau < 1:
            raise ValueError("need m_tau >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def interval_edges(self) -> np.ndarray:
        return np.linspace(0.0, self.tau, self.m_tau + 1)

    def candidates_for(self, k: int) -> list:
        if self.candidates is not None:
            return [tuple(sorted(c)) for c in self.candidates[k]]
        return list(itertools.combinations(range(self.n_S), self.m_s))


@dataclass
class TrajectoryProblem:
    start: np.ndarray
    speed: float
    segments: int
    tau: float
    heading_bounds: tuple = (-math.inf, math.inf)

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if self.segments < 1:
            raise ValueError("segments must be at least 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class PlanResult:
    decision: object
    objective: float
    gains: list
    report: InfoReport = field(repr=False)
    path: Optional[np.ndarray] = None   # rows (t, x, y, heading)
    evaluations: int = 0
    profile: Optional[object] = field(default=None, repr=False)  # heading as a function of t


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get("INFOPLAN_THREADS", "1"))
    return max(1, int(threads))


def evaluate(system, sensing, decision, spec: VerificationSpec, tau: float,
             step: float = DEFAULT_STEP, P0_given_V=None) -> InfoReport:
    """On-the-fly MI of a decision against a point or window verification."""
    if P0_given_V is None:
        P0_given_V = p0_given(system, spec, step)
    end = spec.T if spec.kind == "point" else spec.T_i
    if not 0 <= tau <= end:
        raise ValueError("sensing horizon tau must not pass the verification start")
    segs = sensing.segments(decision, tau) if hasattr(sensing, "segments") else list(sensing)
    return information_flow(system, segs, P0_given_V, tau, step)


def _interval_gains(report: InfoReport, edges) -> list:
    return [report.gain_between(a, b) for a, b in zip(edges[:-1], edges[1:])]


# ----------------------------------------------------------------------------
# sensor scheduling

def _batched_riccati(system, Q0, infos, grid: TimeGrid):
    """Propagate one filter covariance per stacked information matrix (LTI sensing).

    Integrates Y = Q^-1, where sensor information enters additively:
    dY/dt = -Y A - A' Y - Y W Y + C' Sigma_N^-1 C. Strong sensors make the
    covariance form stiff, while this form only sees W Y. With W = G G',
    Y W Y = (Y G)(Y G)' keeps the batched work to thin products.
    """
    N, n, _ = infos.shape
    Y = np.broadcast_to(np.linalg.inv(Q0), infos.shape).copy()
    t, h = grid.t_start, grid.step
    A_norm = np.linalg.norm(system.A_at(grid.t_start), 2)

    def thin(X, M):
        # X @ M for a stack X and a constant M, as one GEMM
        return (X.reshape(N * n, n) @ M).reshape(N, n, M.shape[1])

    def rhs(s, X):
        YA = thin(X, system.A_at(s))
        U = thin(X, G)
        out = infos - YA
        out -= np.swapaxes(YA, -1, -2)
        for k in range(U.shape[2]):
            u = U[:, :, k]
            out -= u[:, :, None] * u[:, None, :]
        return out

    for _ in range(grid.n_steps):
        G = system.B_at(t) @ np.linalg.cholesky(system.Sigma_W)
        # lambda_max(W Y) <= trace(G' Y G)
        lam = float(np.einsum("nik,ik->n", thin(Y, G), G).max())
        m = max(1, math.ceil(h * 2.0 * (A_norm + max(lam, 0.0)) / STIFF_LIMIT))
        for j in range(m):
            Y, _ = rk4_step(rhs, t + j * h / m, Y, h / m)
            Y = 0.5 * (Y + np.swapaxes(Y, -1, -2))
        t += h
    return np.linalg.inv(Y)


def _best_index(values: np.ndarray) -> int:
    best = float(np.max(values))
    tol = TIE_RTOL * max(1.0, abs(best))
    return int(np.flatnonzero(values >= best - tol)[0])


def schedule_exhaustive(system, sensing, spec: VerificationSpec, problem: ScheduleProblem,
                        step: float = DEFAULT_STEP, threads: Optional[int] = None,
                        P0_given_V=None, cross_exhaustive: bool = False) -> PlanResult:
    """Greedy across intervals, exhaustive within each interval.

    For every interval the subset maximizing the MI accumulated up to the
    interval end is kept; earlier choices condition later ones through Q_X.
    """
    if P0_given_V is None:
        P0_given_V = p0_given(system, spec, step)
    if cross_exhaustive:
        return _schedule_cross(system, sensing, spec, problem, step, P0_given_V)
    edges = problem.interval_edges()
    threads = resolve_threads(threads)
    state = FlowState.initial(system, P0_given_V)
    chosen, evals = [], 0
    for k in range(problem.m_tau):
        cands = problem.candidates_for(k)
        if len(cands) > CANDIDATE_BUDGET:
            raise PlanningBudgetError(
                f"{len(cands)} candidate subsets in interval {k} exceed {CANDIDATE_BUDGET}; "
                "restrict the candidate sets or reduce n_S/m_s")
        a, b = float(edges[k]), float(edges[k + 1])
        # prior and conditioned flows do not depend on the decision
        _, Y, _ = advance(system, state, [], b, step)
        P_X, P_XV = Y[-1, 0], Y[-1, 1]
        infos = np.array([sensing.info_matrix(c) for c in cands])

        def score(idx, grid):
            Q = _batched_riccati(system, state.Q_X, infos[idx], grid)
            return onthefly_mi_cov(P_X, P_XV, Q)

        # screen every candidate on a coarse grid, then rank the leaders at full resolution
        coarse = TimeGrid.fitted(a, b, SCREEN_FACTOR * step)
        # fixed chunking keeps results independent of the thread count
        chunks = [np.arange(i, min(i + BATCH, len(cands))) for i in range(0, len(cands), BATCH)]
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(lambda idx: score(idx, coarse), chunks))
        else:
            parts = [score(idx, coarse) for idx in chunks]
        values = np.concatenate(parts)
        lead = np.sort(np.argsort(-values, kind="stable")[:REFINE])
        fine = score(lead, TimeGrid.fitted(a, b, step))
        evals += len(cands)
        best = cands[lead[_best_index(fine)]]
        chosen.append(tuple(best))
        seg = sensing.segments([best], b - a)[0]
        seg = SensingSegment(a, b, seg.C, seg.Sigma_N)
        _, Y, _ = advance(system, state, [seg], b, step)
        state = FlowState(b, Y[-1, 0], Y[-1, 1], Y[-1, 2])
    report = evaluate(system, sensing, chosen, spec, problem.tau, step, P0_given_V)
    return PlanResult(chosen, report.total_mi, _interval_gains(report, edges), report,
                      evaluations=evals)


def _schedule_cross(system, sensing, spec, problem, step, P0_given_V) -> PlanResult:
    per = [problem.candidates_for(k) for k in range(problem.m_tau)]
    total = math.prod(len(c) for c in per)
    if total > CROSS_BUDGET:
        raise PlanningBudgetError(
            f"{total} joint schedules exceed {CROSS_BUDGET}; use the greedy interval search")
    best, best_val = None, -math.inf
    for decision in itertools.product(*per):
        val = evaluate(system, sensing, list(decision), spec, problem.tau, step,
                       P0_given_V).total_mi
        if best is None or val > best_val + TIE_RTOL * max(1.0, abs(best_val)):
            best, best_val = list(decision), val
    report = evaluate(system, sensing, best, spec, problem.tau, step, P0_given_V)
    return PlanResult(best, report.total_mi, _interval_gains(report, problem.interval_edges()),
                      report, evaluations=total)


# ----------------------------------------------------------------------------
# moving sensor

def rate_gradient(Pi: np.ndarray, scenario, position, sigma_n2: float) -> np.ndarray:
    """Spatial gradient of the information rate at a sensor location."""
    C = scenario.C(position)[0]
    dx, dy = scenario.C_gradient(position)
    CPi = C @ Pi
    return np.array([CPi @ dx, CPi @ dy]) / sigma_n2


def gradient_steer(Q_X, Delta_S, scenario, position, Pi: Optional[np.ndarray] = None,
                   sigma_n2: Optional[float] = None) -> Optional[float]:
    """Heading of steepest ascent of the information rate; None when the gradient vanishes."""
    if Pi is None:
        n = Q_X.shape[0]
        Pi = Q_X @ Delta_S @ np.linalg.solve(np.eye(n) + Q_X @ Delta_S, Q_X)
        Pi = sym(Pi)
    if sigma_n2 is None:
        sigma_n2 = scenario.sigma_n ** 2
    g = rate_gradient(Pi, scenario, position, sigma_n2)
    scale = float(np.abs(Pi).max()) if Pi.size else 0.0
    if not np.all(np.isfinite(g)) or np.hypot(*g) <= 1e-14 * max(scale, 1e-300) / sigma_n2:
        return None
    return float(math.atan2(g[1], g[0]))


def rate_at(Pi, scenario, position, sigma_n2) -> float:
    C = scenario.C(position)
    return rate_from_pi(Pi, C, np.array([[sigma_n2]]))


class HeadingPath:
    """Sensor path from a heading profile, tabulated on the half-step grid."""

    def __init__(self, start, speed: float, headings, tau: float, step: float):
        grid = TimeGrid.fitted(0.0, tau, step)
        self.n = 2 * grid.n_steps
        self.h = tau / self.n
        self.tau = tau
        t = np.linspace(0.0, tau, self.n + 1)
        theta = np.array([headings(s) for s in t])
        tm = t[:-1] + 0.5 * self.h
        thm = np.array([headings(s) for s in tm])
        # Simpson per half step
        vx = speed * (np.cos(theta[:-1]) + 4 * np.cos(thm) + np.cos(theta[1:])) / 6 * self.h
        vy = speed * (np.sin(theta[:-1]) + 4 * np.sin(thm) + np.sin(theta[1:])) / 6 * self.h
        xy = np.zeros((self.n + 1, 2))
        xy[0] = start
        xy[1:, 0] = start[0] + np.cumsum(vx)
        xy[1:, 1] = start[1] + np.cumsum(vy)
        self.t, self.xy, self.theta = t, xy, theta

    def __call__(self, t: float) -> np.ndarray:
        u = t / self.h
        k = int(round(u))
        if abs(u - k) < 1e-7 and 0 <= k <= self.n:
            return self.xy[k]
        return np.array([np.interp(t, self.t, self.xy[:, 0]), np.interp(t, self.t, self.xy[:, 1])])

    def table(self) -> np.ndarray:
        return np.column_stack((self.t, self.xy, self.theta))[::2]


def knot_profile(knots, tau: float):
    knots = np.asarray(knots, dtype=float)
    tk = np.linspace(0.0, tau, len(knots))
    return lambda t: float(np.interp(t, tk, knots))


def steer_rollout(system, sensing, spec: VerificationSpec, problem: TrajectoryProblem,
                  step: float = DEFAULT_STEP, P0_given_V=None) -> PlanResult:
    """Follow the steering law, re-evaluating the heading at every integration node.

    The heading is held over each step; a vanishing gradient keeps the
    previous heading.
    """
    if P0_given_V is None:
        P0_given_V = p0_given(system, spec, step)
    scenario = sensing.scenario
    s2 = scenario.sigma_n ** 2
    grid = TimeGrid.fitted(0.0, problem.tau, step)
    h = grid.step
    state = np.stack((system.P0, sym(np.asarray(P0_given_V, dtype=float)), system.P0))
    pos = problem.start.copy()
    heading = 0.0
    node_headings = []
    t = 0.0
    for k in range(grid.n_steps):
        Pi = rate_matrix_cov(state[0], state[1], state[2])
        th = gradient_steer(None, None, scenario, pos, Pi=Pi, sigma_n2=s2)
        if th is not None:
            heading = th
        node_headings.append(heading)
        p0, hd = pos.copy(), heading

        def track(s):
            return p0 + problem.speed * (s - t) * np.array([math.cos(hd), math.sin(hd)])

        C_fn = lambda s: scenario.C(track(s))
        info = lambda s: C_fn(s).T @ C_fn(s) / s2
        state, _ = rk4_step(flow_rhs(system, info), t, state, h)
        state = 0.5 * (state + np.swapaxes(state, -1, -2))
        pos = track(t + h)
        t = grid.t_start + (k + 1) * h
    headings = np.array(node_headings)

    def profile(s):
        k = min(int(math.floor(s / h + 1e-9)), len(headings) - 1)
        return float(headings[max(k, 0)])

    path = HeadingPath(problem.start, problem.speed, profile, problem.tau, step)
    report = evaluate(system, sensing, path, spec, problem.tau, step, P0_given_V)
    return PlanResult(headings, report.total_mi, [report.total_mi], report, path=path.table(),
                      evaluations=1, profile=profile)


def _objective(system, sensing, spec, problem, step, P0V, knots):
    lo, hi = problem.heading_bounds
    knots = np.clip(knots, lo, hi)
    path = HeadingPath(problem.start, problem.speed, knot_profile(knots, problem.tau),
                       problem.tau, step)
    return evaluate(system, sensing, path, spec, problem.tau, step, P0V).total_mi, path


def pattern_search(f, x0, step0: float = math.pi / 4, budget: int = 200,
                   shrink: float = 0.5, min_step: float = 1e-6):
    """Coordinate-wise compass search; returns (x, f(x), evaluations)."""
    x = np.array(x0, dtype=float)
    fx = f(x)
    evals, s = 1, step0
    while evals < budget and s > min_step:
        improved = False
        for i in range(len(x)):
            for d in (1.0, -1.0):
                if evals >= budget:
                    break
                y = x.copy()
                y[i] += d * s
                fy = f(y)
                evals += 1
                if fy > fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            s *= shrink
    return x, fx, evals


def trajectory_optimize(system, sensing, spec: VerificationSpec, problem: TrajectoryProblem,
                        multistart: int = 36, step: float = DEFAULT_STEP, budget: int = 200,
                        threads: Optional[int] = None, P0_given_V=None,
                        initial_knots: Sequence = ()) -> PlanResult:
    """Multistart pattern search over a piecewise-linear heading profile."""
    if multistart < 1:
        raise ValueError("multistart must be at least 1")
    if P0_given_V is None:
        P0_given_V = p0_given(system, spec, step)
    nk = problem.segments + 1

    def f(knots):
        return _objective(system, sensing, spec, problem, step, P0_given_V, knots)[0]

    starts = [np.full(nk, 2 * math.pi * j / multistart) for j in range(multistart)]
    starts += [np.asarray(k, dtype=float) for k in initial_knots]
    threads = resolve_threads(threads)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = list(pool.map(lambda x0: pattern_search(f, x0, budget=budget), starts))
    else:
        runs = [pattern_search(f, x0, budget=budget) for x0 in starts]
    vals = np.array([r[1] for r in runs])
    best = runs[_best_index(vals)][0]
    best = np.clip(best, *problem.heading_bounds)
    _, path = _objective(system, sensing, spec, problem, step, P0_given_V, best)
    report = evaluate(system, sensing, path, spec, problem.tau, step, P0_given_V)
    return PlanResult(best, report.total_mi, [report.total_mi], report, path=path.table(),
                      evaluations=int(sum(r[2] for r in runs)),
                      profile=knot_profile(best, problem.tau))


def steer_knots(result: PlanResult, problem: TrajectoryProblem) -> np.ndarray:
    """Least-squares piecewise-linear fit of a rollout heading history (unwrapped)."""
    h = np.unwrap(np.asarray(result.decision, dtype=float))
    t = np.linspace(0.0, problem.tau, len(h) + 1)[:-1]
    tk = np.linspace(0.0, problem.tau, problem.segments + 1)
    basis = np.column_stack([np.interp(t, tk, np.eye(len(tk))[j]) for j in range(len(tk))])
    return np.linalg.lstsq(basis, h, rcond=None)[0]


# ----------------------------------------------------------------------------
# information potential field

def flow_state_at(system, sensing, spec, t: float, decision=None, step: float = DEFAULT_STEP,
                  P0_given_V=None) -> FlowState:
    if P0_given_V is None:
        P0_given_V = p0_given(system, spec, step)
    state = FlowState.initial(system, P0_given_V)
    if t <= 0:
        return state
    segs = sensing.segments(decision, t) if decision is not None else []
    _, Y, _ = advance(system, state, segs, t, step)
    return FlowState(t, Y[-1, 0], Y[-1, 1], Y[-1, 2])


def field_map(system, sensing, spec: VerificationSpec, xs, ys, t: float = 0.0, decision=None,
              step: float = DEFAULT_STEP, P0_given_V=None, state: Optional[FlowState] = None):
    """Information rate for a hypothetical sensor at every lattice point; shape (len(ys), len(xs))."""
    if state is None:
        state = flow_state_at(system, sensing, spec, t, decision, step, P0_given_V)
    Pi = state.Pi
    s2 = sensing.scenario.sigma_n ** 2
    out = np.zeros((len(ys), len(xs)))
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            out[i, j] = rate_at(Pi, sensing.scenario, (x, y), s2)
    return out


def local_maxima(field: np.ndarray) -> list:
    """Interior strict local maxima (8-neighbourhood) as (row, col) indices."""
    peaks = []
    for i in range(1, field.shape[0] - 1):
        for j in range(1, field.shape[1] - 1):
            nb = field[i - 1:i + 2, j - 1:j + 2].copy()
            nb[1, 1] = -np.inf
            if field[i, j] > nb.max():
                peaks.append((i, j))
    return peaks


def compare_strategies(system, sensing, spec: VerificationSpec, problem: TrajectoryProblem,
                       multistart: int = 36, step: float = DEFAULT_STEP, budget: int = 200,
                       threads: Optional[int] = None, point_spec: Optional[VerificationSpec] = None):
    """IWF/IPF optimized and steered paths, each scored under the windowed objective."""
    from .scenarios import ipf_counterpart

    if point_spec is None:
        point_spec = ipf_counterpart(spec)
    P_w = p0_given(system, spec, step)
    P_p = p0_given(system, point_spec, step)
    out = {}
    for name, sp, P0V in (("iwf", spec, P_w), ("ipf", point_spec, P_p)):
        steer = steer_rollout(system, sensing, sp, problem, step, P0V)
        opt = trajectory_optimize(system, sensing, sp, problem, multistart, step, budget,
                                  threads, P0V, initial_knots=[steer_knots(steer, problem)])
        for kind, res in (("opt", opt), ("steer", steer)):
            out[f"{name}-{kind}"] = (res, score_path(system, sensing, spec, problem, step, P_w,
                                                     res.profile))
    return out


def score_path(system, sensing, spec, problem, step, P0V, profile) -> float:
    """MI of the path induced by a heading profile under ``spec``."""
    path = HeadingPath(problem.start, problem.speed, profile, problem.tau, step)
    return evaluate(system, sensing, path, spec, problem.tau, step, P0V).total_mi
