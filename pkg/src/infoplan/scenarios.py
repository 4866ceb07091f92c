"""Scenario generators.

Singer-model targets observed by a field of pseudo-range sensors, and a
linearized Lorenz-2003 patch observed by a moving platform through a
squared-exponential interpolation kernel. Priors that would normally come
from an upstream estimator are synthesized from a seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import rk4_step
from .system import LinearGaussianSystem, SensingModel, SensingSegment, VerificationSpec

HOURS_PER_MODEL_TIME = 120.0  # one model time unit is 5 days


class ScenarioError(ValueError):
    pass


def random_spd(rng: np.random.Generator, n: int, trace: float, floor: float = 0.2) -> np.ndarray:
    """Seeded SPD matrix: Wishart-like correlation plus a diagonal floor, scaled to ``trace``."""
    G = rng.standard_normal((n, n))
    P = G @ G.T / n + floor * np.eye(n)
    return P * (trace / np.trace(P))


# ----------------------------------------------------------------------------
# Singer targets and pseudo-range sensors

STATE_LABELS = ("x", "vx", "ax", "y", "vy", "ay")
_KIND_INDEX = {"position": (0, 3), "velocity": (1, 4), "acceleration": (2, 5)}


@dataclass
class SingerScenario:
    n_T: int
    sensors: np.ndarray          # (n_S, 2)
    targets: np.ndarray          # nominal positions (n_T, 2)
    kappa: float = 0.4
    alpha: float = 2000.0
    beta: float = 100.0
    sigma_w: float = 0.07
    sigma_n: float = 0.25

    @property
    def n_X(self) -> int:
        return 6 * self.n_T

    @property
    def n_S(self) -> int:
        return len(self.sensors)

    def A(self) -> np.ndarray:
        axis = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -self.kappa]])
        return np.kron(np.eye(2 * self.n_T), axis)

    def B(self) -> np.ndarray:
        B = np.zeros((self.n_X, 2 * self.n_T))
        for k in range(2 * self.n_T):
            B[3 * k + 2, k] = 1.0
        return B

    def selector(self, kind: str) -> np.ndarray:
        """Rows picking the x/y component of ``kind`` for every target."""
        if kind not in _KIND_INDEX:
            raise ScenarioError(f"unknown verification kind {kind!r}")
        rows = []
        for k in range(self.n_T):
            for c in _KIND_INDEX[kind]:
                r = np.zeros(self.n_X)
                r[6 * k + c] = 1.0
                rows.append(r)
        return np.array(rows)

    def sensor_row(self, s: int, k: int) -> np.ndarray:
        """Linearized pseudo-range of target k seen by sensor s (position coordinates only)."""
        d = self.sensors[s] - self.targets[k]
        g = -2.0 * self.alpha / (float(d @ d) + self.beta)
        row = np.zeros(self.n_X)
        row[6 * k] = g * d[0]
        row[6 * k + 3] = g * d[1]
        return row


def pseudo_range_C(scenario: SingerScenario, active: Sequence[int]) -> np.ndarray:
    active = list(active)
    if not active:
        raise ScenarioError("active sensor set must be non-empty")
    return np.array([scenario.sensor_row(s, k) for s in active for k in range(scenario.n_T)])


class SingerSensing(SensingModel):
    """Decision: one tuple of active sensor indices per equal decision interval."""

    def __init__(self, scenario: SingerScenario):
        self.scenario = scenario

    def Sigma_N_for(self, n_active: int) -> np.ndarray:
        return self.scenario.sigma_n ** 2 * np.eye(n_active * self.scenario.n_T)

    def info_matrix(self, active: Sequence[int]) -> np.ndarray:
        C = pseudo_range_C(self.scenario, active)
        return C.T @ C / self.scenario.sigma_n ** 2

    def segments(self, decision, tau: float) -> list[SensingSegment]:
        m = len(decision)
        if m == 0:
            return []
        edges = np.linspace(0.0, tau, m + 1)
        return [SensingSegment(float(edges[k]), float(edges[k + 1]),
                               pseudo_range_C(self.scenario, active),
                               self.Sigma_N_for(len(active)))
                for k, active in enumerate(decision)]


def build_singer(config: Optional[dict] = None, seed: int = 0):
    """Singer scenario; returns (system, sensing, spec, problem)."""
    from .planners import ScheduleProblem

    c = dict(config or {})
    rng = np.random.default_rng(seed)
    n_T = int(c.get("n_T", 1))
    n_S = int(c.get("n_S", 20))
    box = np.asarray(c.get("box", [[0.0, 100.0], [0.0, 100.0]]), dtype=float)
    target_box = np.asarray(c.get("target_box", [[30.0, 70.0], [30.0, 70.0]]), dtype=float)
    sensors = np.asarray(c["sensors"], dtype=float) if "sensors" in c else \
        rng.uniform(box[:, 0], box[:, 1], size=(n_S, 2))
    targets = np.asarray(c["targets"], dtype=float) if "targets" in c else \
        rng.uniform(target_box[:, 0], target_box[:, 1], size=(n_T, 2))
    sc = SingerScenario(
        n_T=n_T,
        sensors=sensors,
        targets=targets,
        kappa=float(c.get("kappa", 0.4)),
        alpha=float(c.get("alpha", 2000.0)),
        beta=float(c.get("beta", 100.0)),
        sigma_w=float(c.get("sigma_w", 0.07)),
        sigma_n=float(c.get("sigma_n", 0.25)),
    )
    if "P0" in c:
        P0 = np.asarray(c["P0"], dtype=float)
    else:
        # acceleration at its stationary spread, which is what a position-only tracker retains
        std = {"position": 1.0, "velocity": 0.5,
               "acceleration": sc.sigma_w / math.sqrt(2.0 * sc.kappa)}
        std.update(c.get("prior_std", {}))
        scale = np.tile([std["position"], std["velocity"], std["acceleration"]] * 2, n_T)
        R = random_spd(rng, sc.n_X, sc.n_X, floor=float(c.get("prior_floor", 0.5)))
        d = np.sqrt(np.diag(R))
        R = R / np.outer(d, d)
        P0 = R * np.outer(scale, scale)
    system = LinearGaussianSystem(sc.A(), sc.B(), sc.sigma_w ** 2 * np.eye(2 * n_T), P0)
    kind = c.get("verification", "velocity")
    T_i, T_f = float(c.get("T_i", 3.0)), float(c.get("T_f", 5.0))
    spec = VerificationSpec.window(sc.selector(kind), T_i, T_f, label=kind)
    problem = ScheduleProblem(
        n_S=sc.n_S,
        m_s=int(c.get("m_s", 5)),
        m_tau=int(c.get("m_tau", 3)),
        tau=float(c.get("tau", 3.0)),
        sensor_locations=sc.sensors,
    )
    return system, SingerSensing(sc), spec, problem


# ----------------------------------------------------------------------------
# Lorenz-2003 weather patch

LORENZ_DEFAULTS = dict(mu=0.66, phi0=8.0, L_i=72, L_j=17)
_SOUTH_PAD, _NORTH_PAD = 5, 3
_SOUTH_VALUE, _NORTH_VALUE = 3.0, 0.0


def _pad(phi: np.ndarray, south: float, north: float) -> np.ndarray:
    shape = phi.shape[:-1]
    s = np.full(shape + (_SOUTH_PAD,), south)
    n = np.full(shape + (_NORTH_PAD,), north)
    return np.concatenate((s, phi, n), axis=-1)


def _advection(a: np.ndarray, b: np.ndarray, mu: float) -> np.ndarray:
    """Bilinear advection term of the two-scale Lorenz-2003 model.

    Arrays are north-south padded, indexed [..., i, p] with periodic i. Output
    covers the interior latitudes.
    """
    def roll(x, k):
        return np.roll(x, k, axis=-2)

    za = (roll(a, 1) + a + roll(a, -1)) / 3.0
    zb = (roll(b, 1) + b + roll(b, -1)) / 3.0
    zonal = (-roll(za, 4) * roll(zb, 2)
             + (roll(za, 3) * roll(b, -1) + roll(za, 2) * roll(b, -2)
                + roll(za, 1) * roll(b, -3)) / 3.0)
    L = a.shape[-1] - _SOUTH_PAD - _NORTH_PAD
    p = np.arange(_SOUTH_PAD, _SOUTH_PAD + L)

    def eta(x, q):
        return (x[..., q - 1] + x[..., q] + x[..., q + 1]) / 3.0

    merid = (-eta(a, p - 4) * eta(b, p - 2)
             + (eta(a, p - 3) * b[..., p + 1] + eta(a, p - 2) * b[..., p + 2]
                + eta(a, p - 1) * b[..., p + 3]) / 3.0)
    return zonal[..., p] + mu * merid


def lorenz2003_rhs(state: np.ndarray, mu: float = 0.66, phi0: float = 8.0) -> np.ndarray:
    """d(phi)/dt on an (L_i, L_j) grid; periodic west-east, fixed north/south values."""
    phi = np.asarray(state, dtype=float)
    pp = _pad(phi, _SOUTH_VALUE, _NORTH_VALUE)
    return -phi + _advection(pp, pp, mu) + phi0


def lorenz2003_jvp(state: np.ndarray, v: np.ndarray, mu: float = 0.66) -> np.ndarray:
    """Exact Jacobian-vector product; ``v`` may carry leading batch axes."""
    pp = _pad(np.asarray(state, dtype=float), _SOUTH_VALUE, _NORTH_VALUE)
    vp = _pad(np.asarray(v, dtype=float), 0.0, 0.0)
    return -v + _advection(vp, pp, mu) + _advection(pp, vp, mu)


def region_indices(region) -> list:
    """(i, j) zero-based grid indices of a local window, x varying fastest."""
    i0, j0, ni, nj = region
    return [(i0 + a, j0 + b) for b in range(nj) for a in range(ni)]


def lorenz_jacobian_local(state: np.ndarray, region=(45, 9, 4, 3), mu: float = 0.66) -> np.ndarray:
    """Jacobian restricted to a local window; couplings leaving the window are dropped."""
    idx = region_indices(region)
    n = len(idx)
    basis = np.zeros((n,) + state.shape)
    for k, (i, j) in enumerate(idx):
        basis[k, i, j] = 1.0
    cols = lorenz2003_jvp(state, basis, mu)
    rows_i = np.array([i for i, _ in idx])
    rows_j = np.array([j for _, j in idx])
    return cols[:, rows_i, rows_j].T


def spin_up(seed: int, steps: int = 500, dt: float = 0.01, L_i: int = 72, L_j: int = 17,
            mu: float = 0.66, phi0: float = 8.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    phi = phi0 * 0.5 + rng.standard_normal((L_i, L_j))
    for _ in range(steps):
        phi, _ = rk4_step(lambda t, x: lorenz2003_rhs(x, mu, phi0), 0.0, phi, dt)
    return phi


@dataclass
class WeatherScenario:
    nodes: np.ndarray                # (12, 2) grid-unit locations
    length_scales: tuple = (1.0, 0.7)
    sigma_n: float = 0.05
    alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        G = self.kernel(self.nodes)
        try:
            self.alpha = np.linalg.inv(G)
        except np.linalg.LinAlgError:
            raise ScenarioError("kernel Gram matrix is singular; length scales too large") from None
        if np.linalg.cond(G) > 1e12:
            raise ScenarioError("kernel Gram matrix is ill-conditioned; length scales too large")

    def kernel(self, r: np.ndarray) -> np.ndarray:
        """rho(r, r_j) for each row of r against every node: shape (len(r), 12)."""
        r = np.atleast_2d(r)
        lx, ly = self.length_scales
        dx = r[:, None, 0] - self.nodes[None, :, 0]
        dy = r[:, None, 1] - self.nodes[None, :, 1]
        return np.exp(-dx ** 2 / (2 * lx ** 2) - dy ** 2 / (2 * ly ** 2))

    def C(self, r) -> np.ndarray:
        return kernel_C(self, r)

    def C_gradient(self, r):
        """(dC/dx, dC/dy) as length-12 vectors at location r."""
        r = np.asarray(r, dtype=float)
        lx, ly = self.length_scales
        rho = self.kernel(r)[0]
        dx = -(r[0] - self.nodes[:, 0]) / lx ** 2 * rho
        dy = -(r[1] - self.nodes[:, 1]) / ly ** 2 * rho
        return self.alpha @ dx, self.alpha @ dy


def kernel_C(scenario: WeatherScenario, r) -> np.ndarray:
    """Observation row for a point measurement at r: C_i = sum_j alpha_ij rho(r, r_j)."""
    return (scenario.alpha @ scenario.kernel(np.asarray(r, dtype=float))[0])[None, :]


class WeatherSensing(SensingModel):
    """Decision: a platform path, a callable t -> (x, y) in grid units."""

    def __init__(self, scenario: WeatherScenario):
        self.scenario = scenario
        self.Sigma_N = np.array([[scenario.sigma_n ** 2]])

    def segments(self, decision, tau: float) -> list[SensingSegment]:
        path = decision
        return [SensingSegment(0.0, tau, lambda t: kernel_C(self.scenario, path(t)), self.Sigma_N)]


def build_weather(config: Optional[dict] = None, seed: int = 0):
    """Weather scenario; returns (system, sensing, spec, problem). Times in hours are converted."""
    from .planners import TrajectoryProblem

    c = dict(config or {})
    region = tuple(c.get("region", (45, 9, 4, 3)))
    if region[2] * region[3] != 12 and "allow_any_region" not in c:
        raise ScenarioError("the weather patch is 4x3 (12 states)")
    mu = float(c.get("mu", LORENZ_DEFAULTS["mu"]))
    phi0 = float(c.get("phi0", LORENZ_DEFAULTS["phi0"]))
    state = spin_up(seed, int(c.get("spinup_steps", 500)), float(c.get("spinup_dt", 0.01)),
                    int(c.get("L_i", 72)), int(c.get("L_j", 17)), mu, phi0)
    A = lorenz_jacobian_local(state, region, mu)
    nodes = np.array([(i + 1.0, j + 1.0) for i, j in region_indices(region)])
    sc = WeatherScenario(nodes, tuple(c.get("length_scales", (1.0, 0.7))),
                         float(c.get("sigma_n", 0.05)))
    rng = np.random.default_rng(seed + 1)
    n = len(nodes)
    P0 = np.asarray(c["P0"], dtype=float) if "P0" in c else \
        random_spd(rng, n, float(c.get("prior_trace", 0.5 * n)))
    sigma_w = float(c.get("sigma_w", 0.5))
    system = LinearGaussianSystem(A, np.eye(n), sigma_w ** 2 * np.eye(n), P0)

    x0, y0 = nodes[:, 0].min(), nodes[:, 1].min()
    starts = np.asarray(c.get("objects_start", [[x0 + 0.5, y0 + 0.5], [x0 + 2.0, y0 + 1.0]]))
    moves = np.asarray(c.get("objects_move", [[1.0, 0.0], [0.0, 1.0]]))
    M_i = np.vstack([kernel_C(sc, p) for p in starts])
    M_f = np.vstack([kernel_C(sc, p + d) for p, d in zip(starts, moves)])
    T_i = float(c.get("T_i_hr", 60.0)) / HOURS_PER_MODEL_TIME
    T_f = float(c.get("T_f_hr", 84.0)) / HOURS_PER_MODEL_TIME
    spec = VerificationSpec.linear_blend(M_i, M_f, T_i, T_f, label="iwf")
    problem = TrajectoryProblem(
        start=np.asarray(c.get("start", [x0 + 1.5, y0 + 1.0]), dtype=float),
        speed=float(c.get("speed_grid_per_hr", 1.0 / 3.0)) * HOURS_PER_MODEL_TIME,
        segments=int(c.get("segments", 6)),
        tau=float(c.get("tau_hr", 6.0)) / HOURS_PER_MODEL_TIME,
    )
    return system, WeatherSensing(sc), spec, problem


def ipf_counterpart(spec: VerificationSpec) -> VerificationSpec:
    """Point verification at the window midpoint with the averaged verification matrix."""
    Tm = 0.5 * (spec.T_i + spec.T_f)
    M = 0.5 * (spec.mv_at(spec.T_i) + spec.mv_at(spec.T_f))
    return VerificationSpec.point(M, Tm, label="ipf")
