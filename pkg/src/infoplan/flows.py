"""Covariance and information-matrix flows.

Prior covariance (Lyapunov), its inverse together with the inverse
covariance conditioned on the verification entity, the measurement-updated
covariance (Riccati), and the backward flow that carries a conditional
covariance from T_i back to t = 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_STEP,
    MatrixTrajectory,
    NotPositiveDefiniteError,
    TimeGrid,
    cholesky,
    first_non_spd,
    integrate_matrix_ode,
    riccati_stiffness,
    spd_solve,
    sym,
)
from .system import LinearGaussianSystem, SensingSegment


@dataclass(frozen=True)
class FlowBundle:
    S_X: MatrixTrajectory
    S_XV: MatrixTrajectory
    Q_X: MatrixTrajectory
    grid: TimeGrid


def lyapunov_rhs(system: LinearGaussianSystem):
    def rhs(t, P):
        AP = system.A_at(t) @ P
        return AP + AP.T + system.noise_cov_at(t)
    return rhs


def lyapunov_forward(system: LinearGaussianSystem, P_start, grid: TimeGrid) -> MatrixTrajectory:
    """dP/dt = A P + P A' + B Sigma_W B'."""
    return integrate_matrix_ode(lyapunov_rhs(system), P_start, grid, symmetric=True)


def info_rhs(system: LinearGaussianSystem):
    """Coupled right-hand side for the stacked pair (S_X, S_X|V)."""
    def rhs(t, S):
        A = system.A_at(t)
        W = system.noise_cov_at(t)
        SX, SV = S[0], S[1]
        SXA = SX @ A
        dSX = -SXA - SXA.T - SX @ W @ SX
        F = A + W @ SX
        SVF = SV @ F
        dSV = SV @ W @ SV - SVF - SVF.T
        return np.stack((dSX, dSV))
    return rhs


def info_forms_forward(system: LinearGaussianSystem, S_X0, S_XV0, grid: TimeGrid):
    """Integrate the inverse prior and inverse conditioned covariances together."""
    traj = integrate_matrix_ode(info_rhs(system), np.stack((S_X0, S_XV0)), grid, symmetric=True)
    t_bad = first_non_spd(traj.values.reshape(-1, system.n_X, system.n_X),
                          np.repeat(traj.times, 2))
    if t_bad is not None:
        raise NotPositiveDefiniteError("information matrix lost positive definiteness", t_bad)
    sx = MatrixTrajectory(grid, traj.values[:, 0], traj.derivs[:, 0])
    sv = MatrixTrajectory(grid, traj.values[:, 1], traj.derivs[:, 1])
    return sx, sv


def riccati_rhs(system: LinearGaussianSystem, info_at):
    def rhs(t, Q):
        AQ = system.A_at(t) @ Q
        return AQ + AQ.T + system.noise_cov_at(t) - Q @ info_at(t) @ Q
    return rhs


def _zero_info(n):
    Z = np.zeros((n, n))
    return lambda t: Z


def riccati_filter_forward(
    system: LinearGaussianSystem,
    segments: Sequence[SensingSegment],
    Q0,
    grid: TimeGrid,
) -> MatrixTrajectory:
    """dQ/dt = A Q + Q A' + B Sigma_W B' - Q C' Sigma_N^-1 C Q along the given grid.

    The grid must have nodes at every segment boundary inside it; the
    measurement term is dropped where no segment covers the step.
    """
    values, derivs = [], []
    Q = np.asarray(Q0, dtype=float)
    for a, b, info in _pieces(segments, grid, system.n_X):
        sub = TimeGrid(a, b, grid.step) if b > a else None
        if sub is None:
            continue
        tr = integrate_matrix_ode(riccati_rhs(system, info), Q, sub, symmetric=True,
                                  stiffness=riccati_stiffness(system.A_at, info))
        values.append(tr.values if not values else tr.values[1:])
        derivs.append(tr.derivs if not derivs else tr.derivs[1:])
        Q = tr.final
    if not values:
        return MatrixTrajectory(grid, Q[None], np.zeros_like(Q)[None])
    return MatrixTrajectory(grid, np.concatenate(values), np.concatenate(derivs))


def _pieces(segments, grid: TimeGrid, n: int):
    """Split a grid at segment boundaries; yields (a, b, info_fn)."""
    cuts = {grid.t_start, grid.t_end}
    for s in segments:
        for t in (s.t_start, s.t_end):
            if grid.t_start < t < grid.t_end:
                cuts.add(t)
    cuts = sorted(cuts)
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (a + b)
        seg = next((s for s in segments if s.t_start <= mid <= s.t_end), None)
        yield a, b, (seg.info_at if seg is not None else _zero_info(n))


def conditional_lyapunov_backward(
    system: LinearGaussianSystem,
    P_XV_Ti,
    grid: TimeGrid,
    P_X: Optional[MatrixTrajectory] = None,
) -> np.ndarray:
    """Carry Cov(X_{T_i} | verification) back to Cov(X_0 | verification).

    Integrates dP/dt = (A + W P_X^-1) P + P (A + W P_X^-1)' - W backward over
    ``grid`` = [0, T_i], with W = B Sigma_W B' and P_X the stored prior
    covariance (computed forward from P0 when not supplied).
    """
    P_XV_Ti = sym(np.asarray(P_XV_Ti, dtype=float))
    if grid.n_steps == 0 or grid.t_end == grid.t_start:
        return P_XV_Ti
    if P_X is None:
        P_X = lyapunov_forward(system, system.P0, grid)

    def rhs(t, P):
        W = system.noise_cov_at(t)
        F = system.A_at(t) + W @ spd_solve(P_X.at(t), np.eye(system.n_X), "P_X").T
        FP = F @ P
        return FP + FP.T - W

    traj = integrate_matrix_ode(rhs, P_XV_Ti, grid, direction="backward", symmetric=True)
    P0V = traj.initial
    try:
        cholesky(P0V)
    except NotPositiveDefiniteError:
        t_bad = first_non_spd(traj.values, traj.times) or grid.t_start
        raise NotPositiveDefiniteError("conditional covariance lost positive definiteness",
                                       t_bad) from None
    return P0V


def prior_grid(t_end: float, step: float = DEFAULT_STEP) -> TimeGrid:
    return TimeGrid.fitted(0.0, t_end, step)
