"""Mutual information between future verification variables and measurements.

The smoother form needs three flows over the sensing horizon [0, tau] only:
the prior covariance, the covariance conditioned on the verification entity,
and the filter covariance Q_X. Conditioning on a point or on a window enters
solely through the initial value P_0|V. The information-form flows
(S_X, S_X|V) are available through ``form="information"``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_STEP,
    NumericalConsistencyError,
    TimeGrid,
    integrate_matrix_ode,
    riccati_stiffness,
    ldet,
    spd_inv,
    sym,
)
from .flows import _pieces, lyapunov_forward, riccati_filter_forward
from .smoother import DegenerateVerificationError, p0_given_point, p0_given_window
from .system import LinearGaussianSystem, SensingModel, SensingSegment, VerificationSpec


@dataclass(frozen=True)
class FlowState:
    """Prior, verification-conditioned and filter covariances at time t.

    The flows are carried in covariance form; the information-form
    quantities (S_X, S_X|V, Delta_S, J_0) are derived on demand. The
    covariance form stays finite when Cov(X_t | V) becomes singular, which
    happens as t approaches T (or T_i) whenever the verification entity
    pins some state directions exactly.
    """

    t: float
    P_X: np.ndarray
    P_XV: np.ndarray
    Q_X: np.ndarray

    @classmethod
    def initial(cls, system: LinearGaussianSystem, P0_given_V: np.ndarray) -> "FlowState":
        return cls(0.0, system.P0.copy(), sym(np.asarray(P0_given_V, dtype=float)),
                   system.P0.copy())

    @property
    def S_X(self) -> np.ndarray:
        return spd_inv(self.P_X, "P_X")

    @property
    def S_XV(self) -> np.ndarray:
        return spd_inv(self.P_XV, "P_X|V")

    @property
    def Delta_S(self) -> np.ndarray:
        return self.S_XV - self.S_X

    @property
    def J0(self) -> float:
        return 0.5 * ldet(self.P_X) - 0.5 * ldet(self.P_XV)

    @property
    def mi(self) -> float:
        return float(onthefly_mi_cov(self.P_X, self.P_XV, self.Q_X))

    @property
    def Pi(self) -> np.ndarray:
        return rate_matrix_cov(self.P_X, self.P_XV, self.Q_X)


@dataclass
class InfoReport:
    total_mi: float
    J0: float
    Delta_S: Optional[np.ndarray]
    times: np.ndarray
    onthefly: np.ndarray
    rate: np.ndarray
    final: FlowState
    P0_given_V: np.ndarray = field(repr=False, default=None)

    def gain_between(self, t0: float, t1: float) -> float:
        return float(np.interp(t1, self.times, self.onthefly)
                     - np.interp(t0, self.times, self.onthefly))


def onthefly_mi(S_X, S_XV, Q_X):
    """J_0 - 1/2 ldet(I + Q_X Delta_S) in information form; broadcasts over leading axes."""
    n = S_X.shape[-1]
    s1, l_sv = np.linalg.slogdet(S_XV)
    s2, l_sx = np.linalg.slogdet(S_X)
    s3, l_ip = np.linalg.slogdet(np.eye(n) + Q_X @ (S_XV - S_X))
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        raise NumericalConsistencyError("information matrix is not positive definite")
    if np.any(s3 <= 0):
        raise NumericalConsistencyError("I + Q_X Delta_S is not positive definite")
    return 0.5 * (l_sv - l_sx) - 0.5 * l_ip


def _mixed(P_X, P_XV, Q_X):
    # N = (I + Q Delta_S) P_XV = P_XV + Q P_X^-1 (P_X - P_XV)
    return P_XV + Q_X @ np.linalg.solve(P_X, P_X - P_XV)


def onthefly_mi_cov(P_X, P_XV, Q_X):
    """Same quantity as :func:`onthefly_mi` from covariances: 1/2 ldet P_X - 1/2 ldet N."""
    s1, l_px = np.linalg.slogdet(P_X)
    s2, l_n = np.linalg.slogdet(_mixed(P_X, P_XV, Q_X))
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        raise NumericalConsistencyError("I + Q_X Delta_S is not positive definite")
    return 0.5 * (l_px - l_n)


def info_rate(Q_X_t, Delta_S_t, C_t, Sigma_N) -> float:
    """Instantaneous rate 1/2 tr(Sigma_N^-1 C Pi C') of on-the-fly information."""
    return rate_from_pi(rate_matrix(Q_X_t, Delta_S_t), C_t, Sigma_N)


def rate_from_pi(Pi, C_t, Sigma_N) -> float:
    C = np.atleast_2d(C_t)
    Sigma_N = np.atleast_2d(Sigma_N)
    return 0.5 * float(np.trace(np.linalg.solve(Sigma_N, C @ Pi @ C.T)))


def rate_matrix(Q_X_t, Delta_S_t) -> np.ndarray:
    """Pi = Q Delta (I + Q Delta)^-1 Q; symmetric PSD."""
    Q = np.asarray(Q_X_t, dtype=float)
    QD = Q @ Delta_S_t
    try:
        Pi = QD @ np.linalg.solve(np.eye(Q.shape[-1]) + QD, Q)
    except np.linalg.LinAlgError:
        raise NumericalConsistencyError("I + Q_X Delta_S is singular") from None
    return sym(Pi)


def rate_matrix_cov(P_X, P_XV, Q_X) -> np.ndarray:
    """Pi from covariances: Q (I - P_X^-1 P_XV) N^-1 Q, finite when P_XV is singular."""
    try:
        left = Q_X @ np.linalg.solve(P_X, P_X - P_XV)
        Pi = left @ np.linalg.solve(_mixed(P_X, P_XV, Q_X), Q_X)
    except np.linalg.LinAlgError:
        raise NumericalConsistencyError("I + Q_X Delta_S is singular") from None
    return sym(Pi)


def flow_rhs(system: LinearGaussianSystem, info_at):
    """Right-hand side for the stacked covariance triple (P_X, P_X|V, Q_X)."""
    n = system.n_X
    eye = np.eye(n)

    def rhs(t, Y):
        A = system.A_at(t)
        W = system.noise_cov_at(t)
        P, PV, Q = Y[0], Y[1], Y[2]
        AP = A @ P
        F = A + W @ np.linalg.solve(P, eye)
        FPV = F @ PV
        AQ = A @ Q
        return np.stack((
            AP + AP.T + W,
            FPV + FPV.T - W,
            AQ + AQ.T + W - Q @ info_at(t) @ Q,
        ))
    return rhs


def info_flow_rhs(system: LinearGaussianSystem, info_at):
    """Right-hand side for the information-form triple (S_X, S_X|V, Q_X)."""
    def rhs(t, Y):
        A = system.A_at(t)
        W = system.noise_cov_at(t)
        SX, SV, Q = Y[0], Y[1], Y[2]
        SXA = SX @ A
        WSX = W @ SX
        SVF = SV @ (A + WSX)
        AQ = A @ Q
        return np.stack((
            -SXA - SXA.T - SX @ WSX,
            SV @ W @ SV - SVF - SVF.T,
            AQ + AQ.T + W - Q @ info_at(t) @ Q,
        ))
    return rhs


def advance(system: LinearGaussianSystem, state: FlowState,
            segments: Sequence[SensingSegment], t_end: float, step: float = DEFAULT_STEP,
            form: str = "covariance"):
    """Integrate the three flows from ``state.t`` to ``t_end``.

    Returns (times, stacked values (N, 3, n, n), owning segment per node).
    The stacked values are (P_X, P_XV, Q_X) for ``form="covariance"`` and
    (S_X, S_XV, Q_X) for ``form="information"``.
    """
    if form == "covariance":
        Y, make_rhs = np.stack((state.P_X, state.P_XV, state.Q_X)), flow_rhs
    elif form == "information":
        Y, make_rhs = np.stack((state.S_X, state.S_XV, state.Q_X)), info_flow_rhs
    else:
        raise ValueError("form must be 'covariance' or 'information'")
    times, values, owners = [state.t], [Y], [None]
    span = TimeGrid(state.t, t_end, max(t_end - state.t, step))
    for a, b, info in _pieces(segments, span, system.n_X):
        if b <= a:
            continue
        traj = integrate_matrix_ode(make_rhs(system, info), values[-1],
                                    TimeGrid.fitted(a, b, step), symmetric=True,
                                    stiffness=riccati_stiffness(system.A_at, info, 2))
        times.extend(traj.times[1:])
        values.extend(traj.values[1:])
        owner = next((s for s in segments if s.t_start <= 0.5 * (a + b) <= s.t_end), None)
        if owners[-1] is None:
            owners[-1] = owner
        owners.extend([owner] * (len(traj.times) - 1))
    return np.asarray(times), np.asarray(values), owners


def information_flow(
    system: LinearGaussianSystem,
    segments: Sequence[SensingSegment],
    P0_given_V: np.ndarray,
    tau: float,
    step: float = DEFAULT_STEP,
    state: Optional[FlowState] = None,
    form: str = "covariance",
) -> InfoReport:
    """On-the-fly information and its rate over [state.t, tau] (state defaults to t=0)."""
    if state is None:
        state = FlowState.initial(system, P0_given_V)
    times, Y, owners = advance(system, state, segments, tau, step, form)
    if form == "covariance":
        PX, PV, Q = Y[:, 0], Y[:, 1], Y[:, 2]
        mi = onthefly_mi_cov(PX, PV, Q)
        Pis = [rate_matrix_cov(PX[k], PV[k], Q[k]) if seg is not None else None
               for k, seg in enumerate(owners)]
        final = FlowState(float(times[-1]), PX[-1], PV[-1], Q[-1])
    else:
        SX, SV, Q = Y[:, 0], Y[:, 1], Y[:, 2]
        mi = onthefly_mi(SX, SV, Q)
        Pis = [rate_matrix(Q[k], SV[k] - SX[k]) if seg is not None else None
               for k, seg in enumerate(owners)]
        final = FlowState(float(times[-1]), spd_inv(SX[-1]), spd_inv(SV[-1]), Q[-1])
    rate = np.zeros(len(times))
    for k, seg in enumerate(owners):
        if seg is not None:
            rate[k] = rate_from_pi(Pis[k], seg.C_at(times[k]), seg.Sigma_N)
    try:
        J0, Delta = final.J0, final.Delta_S
    except np.linalg.LinAlgError:
        # verification pins some directions of X_tau exactly
        J0, Delta = float("inf"), None
    return InfoReport(
        total_mi=float(mi[-1]),
        J0=J0,
        Delta_S=Delta,
        times=times,
        onthefly=np.asarray(mi),
        rate=rate,
        final=final,
        P0_given_V=P0_given_V,
    )


def _segments(sensing, decision, tau):
    if isinstance(sensing, SensingModel):
        return sensing.segments(decision, tau)
    return list(sensing)


def mi_windowed(
    system: LinearGaussianSystem,
    sensing,
    decision,
    spec: VerificationSpec,
    tau: float,
    step: float = DEFAULT_STEP,
    P0_given_V: Optional[np.ndarray] = None,
    K_max: int = 6,
    form: str = "covariance",
) -> InfoReport:
    """I(V over [T_i, T_f]; Z over [0, tau]) with its on-the-fly trace.

    ``sensing`` is a :class:`SensingModel` (interpreting ``decision``) or a
    ready list of segments.
    """
    if spec.kind != "window":
        raise ValueError("mi_windowed needs a window verification spec")
    if not 0 <= tau <= spec.T_i:
        raise ValueError("sensing horizon tau must lie in [0, T_i]")
    if P0_given_V is None:
        P0_given_V = p0_given_window(system, spec, step, K_max).P0_given_V
    return information_flow(system, _segments(sensing, decision, tau), P0_given_V, tau, step,
                            form=form)


def mi_pointwise_smoother(
    system: LinearGaussianSystem,
    sensing,
    decision,
    spec: VerificationSpec,
    tau: float,
    step: float = DEFAULT_STEP,
    P0_given_V: Optional[np.ndarray] = None,
    form: str = "covariance",
) -> InfoReport:
    """I(V_T; Z over [0, tau]) in smoother form."""
    if spec.kind != "point":
        raise ValueError("mi_pointwise_smoother needs a point verification spec")
    if not 0 <= tau <= spec.T:
        raise ValueError("sensing horizon tau must lie in [0, T]")
    if P0_given_V is None:
        P0_given_V = p0_given_point(system, spec, step)
    return information_flow(system, _segments(sensing, decision, tau), P0_given_V, tau, step,
                            form=form)


def mi_pointwise_filter(
    system: LinearGaussianSystem,
    sensing,
    decision,
    spec: VerificationSpec,
    tau: float,
    step: float = DEFAULT_STEP,
) -> float:
    """Prior minus posterior entropy of V_T, propagating covariances all the way to T."""
    if spec.kind != "point":
        raise ValueError("mi_pointwise_filter needs a point verification spec")
    T = spec.T
    if not 0 <= tau <= T:
        raise ValueError("sensing horizon tau must lie in [0, T]")
    M = spec.mv_at(T)
    P_T = lyapunov_forward(system, system.P0, TimeGrid.fitted(0.0, T, step)).final if T > 0 \
        else system.P0
    segments = _segments(sensing, decision, tau)
    if tau > 0:
        Q_tau = riccati_filter_forward(system, segments, system.P0,
                                       TimeGrid.fitted(0.0, tau, step)).final
    else:
        Q_tau = system.P0
    Q_T = lyapunov_forward(system, Q_tau, TimeGrid.fitted(tau, T, step)).final if T > tau \
        else Q_tau
    try:
        return 0.5 * ldet(sym(M @ P_T @ M.T)) - 0.5 * ldet(sym(M @ Q_T @ M.T))
    except np.linalg.LinAlgError:
        raise DegenerateVerificationError("M_V P M_V' is singular") from None
