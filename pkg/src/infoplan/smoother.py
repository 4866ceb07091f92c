"""Covariance of the initial state conditioned on the verification entity.

Window case: prior Lyapunov flow to T_i, a two-pass fixed-interval smoother
over [T_i, T_f] for the noise-free derivative measurements, then a backward
flow from T_i to 0. Point case: the closed-form fixed-point smoother.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chain import DerivativeChain, build_chain
from .core import (
    DEFAULT_STEP,
    DivergenceError,
    MatrixTrajectory,
    NotPositiveDefiniteError,
    TimeGrid,
    cholesky,
    first_non_spd,
    integrate_matrix_ode,
    spd_solve,
    sym,
)
from .flows import conditional_lyapunov_backward, lyapunov_forward, lyapunov_rhs
from .system import LinearGaussianSystem, VerificationSpec


class DegenerateVerificationError(np.linalg.LinAlgError):
    """The verification functionals have a singular (prior) covariance."""


@dataclass(frozen=True)
class SmootherSolution:
    Pbar: MatrixTrajectory
    Lambda_Ti: np.ndarray
    P_XV_Ti: np.ndarray
    P0_given_V: Optional[np.ndarray] = None
    K: Optional[int] = None


def _pinned_solve(M: np.ndarray, B: np.ndarray) -> np.ndarray:
    try:
        return spd_solve(M, B, "H P H'")
    except NotPositiveDefiniteError:
        raise DegenerateVerificationError(
            "verification covariance H P H' is singular") from None


def project_out(P: np.ndarray, H: np.ndarray) -> np.ndarray:
    """P - P H' (H P H')^-1 H P: covariance after observing H X exactly."""
    if H.shape[0] == 0:
        return sym(P.copy())
    PH = P @ H.T
    try:
        return sym(P - PH @ spd_solve(H @ PH, PH.T, "H P H'"))
    except NotPositiveDefiniteError:
        pass
    # directions of H that P already pins carry no new information
    w, U = np.linalg.eigh(sym(H @ PH))
    small = w <= 1e-12 * max(float(np.trace(P)), 1e-300) * max(np.linalg.norm(H) ** 2, 1.0)
    HU = H.T @ U[:, small]
    if np.any(np.linalg.norm(HU, axis=0) < 1e-9 * np.linalg.norm(H)):
        raise DegenerateVerificationError("verification covariance H P H' is singular")
    return project_out(P, U[:, ~small].T @ H)


def boundary_projection(P_X_Ti: np.ndarray, chain: DerivativeChain, T_i: float) -> np.ndarray:
    """Condition X_{T_i} on the exact values of V and its first K-1 derivatives."""
    return project_out(np.asarray(P_X_Ti, dtype=float), chain.Hstack(T_i))


def smooth_window(
    system: LinearGaussianSystem,
    chain: DerivativeChain,
    P_X_Ti: np.ndarray,
    grid: TimeGrid,
) -> SmootherSolution:
    """Cov(X_{T_i} | V over [T_i, T_f]) from the forward Riccati / backward Lambda pair."""
    T_i = grid.t_start
    Pbar0 = boundary_projection(P_X_Ti, chain, T_i)
    n = system.n_X
    if grid.n_steps == 0 or grid.t_end == grid.t_start:
        traj = MatrixTrajectory(grid, Pbar0[None], np.zeros((1, n, n)))
        return SmootherSolution(traj, np.zeros((n, n)), Pbar0, K=chain.K)

    terms = {}

    def smoother_terms(t):
        out = terms.get(t)
        if out is None:
            out = terms[t] = chain.smoother_terms(t)
        return out

    def pbar_rhs(t, P):
        Abar, BQB, HRH = smoother_terms(t)
        AP = Abar @ P
        return AP + AP.T + BQB - P @ HRH @ P

    Pbar = integrate_matrix_ode(pbar_rhs, Pbar0, grid, symmetric=True)
    t_bad = first_non_spd(Pbar.values, Pbar.times, tol=-1e-8,
                          scale=float(np.trace(P_X_Ti)))
    if t_bad is not None:
        raise NotPositiveDefiniteError("smoother covariance lost positive semidefiniteness", t_bad)

    def lambda_rhs(t, L):
        Abar, _, HRH = smoother_terms(t)
        F = Abar - Pbar.at(t) @ HRH
        LF = L @ F
        return -LF - LF.T - HRH

    Lam = integrate_matrix_ode(lambda_rhs, np.zeros((n, n)), grid, direction="backward",
                               symmetric=True)
    Lam_Ti = Lam.initial
    if not np.all(np.isfinite(Lam_Ti)):
        raise DivergenceError("non-finite Lambda", T_i)
    P0 = Pbar.initial
    P_XV = sym(P0 - P0 @ Lam_Ti @ P0)
    return SmootherSolution(Pbar, Lam_Ti, P_XV, K=chain.K)


def p0_given_window(
    system: LinearGaussianSystem,
    spec: VerificationSpec,
    step: float = DEFAULT_STEP,
    K_max: int = 6,
    chain: Optional[DerivativeChain] = None,
) -> SmootherSolution:
    """Three-step computation of Cov(X_0 | V over [T_i, T_f])."""
    if spec.kind != "window":
        raise ValueError("p0_given_window needs a window verification spec")
    if chain is None:
        chain = build_chain(system, spec, K_max)
    if spec.T_i > 0:
        prior = TimeGrid.fitted(0.0, spec.T_i, step)
        P_X = lyapunov_forward(system, system.P0, prior)
        P_X_Ti = P_X.final
    else:
        P_X, P_X_Ti = None, system.P0
    sol = smooth_window(system, chain, P_X_Ti, TimeGrid.fitted(spec.T_i, spec.T_f, step))
    if P_X is None:
        P0V = sol.P_XV_Ti
    else:
        P0V = conditional_lyapunov_backward(system, sol.P_XV_Ti, P_X.grid, P_X)
    cholesky(P0V, "Cov(X_0 | verification)")
    return SmootherSolution(sol.Pbar, sol.Lambda_Ti, sol.P_XV_Ti, P0V, chain.K)


def p0_given_point(system: LinearGaussianSystem, spec: VerificationSpec,
                   step: float = DEFAULT_STEP) -> np.ndarray:
    """Closed-form Cov(X_0 | V_T)."""
    if spec.kind != "point":
        raise ValueError("p0_given_point needs a point verification spec")
    T = spec.T
    M = spec.mv_at(T)
    if np.linalg.matrix_rank(M) < M.shape[0]:
        raise DegenerateVerificationError("point selector M_V must have full row rank")
    if T > 0:
        grid = TimeGrid.fitted(0.0, T, step)
        n = system.n_X
        lyap = lyapunov_rhs(system)

        # Phi and P_X share one RK4 pass
        def rhs(t, Y):
            return np.stack((system.A_at(t) @ Y[0], lyap(t, Y[1])))

        final = integrate_matrix_ode(rhs, np.stack((np.eye(n), system.P0)), grid).final
        Phi, P_T = final[0], sym(final[1])
    else:
        Phi, P_T = np.eye(system.n_X), system.P0
    MPhiP = M @ Phi @ system.P0
    P0V = sym(system.P0 - MPhiP.T @ _pinned_solve(sym(M @ P_T @ M.T), MPhiP))
    try:
        cholesky(P0V)
    except NotPositiveDefiniteError:
        raise DegenerateVerificationError("Cov(X_0 | V_T) is singular") from None
    return P0V


def p0_given(system: LinearGaussianSystem, spec: VerificationSpec, step: float = DEFAULT_STEP,
             K_max: int = 6) -> np.ndarray:
    if spec.kind == "point":
        return p0_given_point(system, spec, step)
    return p0_given_window(system, spec, step, K_max).P0_given_V

