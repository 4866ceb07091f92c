"""Discrete-time brute-force ground truth.

Every quantity here is built from the exact joint Gaussian law of finitely
many linear functionals of the state path, with no differential equation in
sight: transition matrices and process-noise covariances between event times
come from the Van Loan block exponential. The continuous-time formulas are
checked against these as the sampling gets denser.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .core import NotPositiveDefiniteError, cholesky, ldet, sym
from .system import LinearGaussianSystem, SensingSegment, VerificationSpec, segment_at

MAX_SUBSTEP = 1e-2


class OracleSizeError(ValueError):
    """Joint covariance would exceed the configured row cap."""


def van_loan(A: np.ndarray, W: np.ndarray, dt: float):
    """(Phi, Q) for one step of length dt of dX = A X dt + noise with intensity W."""
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = W
    M[n:, n:] = A.T
    E = scipy.linalg.expm(M * dt)
    Phi = E[n:, n:].T
    Q = Phi @ E[:n, n:]
    return Phi, sym(Q)


@dataclass
class DiscreteJointModel:
    """Exact discretization of a linear-Gaussian system between arbitrary event times."""

    system: LinearGaussianSystem

    def __post_init__(self):
        self._cache = {}

    def step(self, t0: float, t1: float):
        dt = t1 - t0
        if dt <= 0:
            n = self.system.n_X
            return np.eye(n), np.zeros((n, n))
        s = self.system
        if s.time_invariant:
            key = round(dt, 15)
            if key not in self._cache:
                self._cache[key] = van_loan(s.A, s.noise_cov_at(0.0), dt)
            return self._cache[key]
        # time-varying: compose midpoint-frozen sub-steps
        m = max(1, int(np.ceil(dt / MAX_SUBSTEP)))
        h = dt / m
        Phi, Q = np.eye(s.n_X), np.zeros((s.n_X, s.n_X))
        for k in range(m):
            tm = t0 + (k + 0.5) * h
            F, Qk = van_loan(s.A_at(tm), s.noise_cov_at(tm), h)
            Phi, Q = F @ Phi, F @ Q @ F.T + Qk
        return Phi, sym(Q)


def joint_covariance(model: DiscreteJointModel, query: Sequence[tuple]) -> np.ndarray:
    """Covariance of the stacked functionals S_j X(t_j) for query = [(t_j, S_j), ...].

    Rows come out in query order.
    """
    sys_ = model.system
    sels = [np.atleast_2d(np.asarray(S, dtype=float)) for _, S in query]
    sizes = [S.shape[0] for S in sels]
    offs = np.concatenate(([0], np.cumsum(sizes)))
    R = int(offs[-1])
    order = sorted(range(len(query)), key=lambda j: (query[j][0], j))
    # rows in processing order; remapped at the end
    cov = np.zeros((R, R))
    K = np.zeros((sys_.n_X, R))  # Cov(X_t, processed functionals)
    P = sys_.P0.copy()
    t = 0.0
    done = 0
    perm = np.empty(R, dtype=int)
    for j in order:
        tj = float(query[j][0])
        if tj < 0:
            raise ValueError("query times must be non-negative")
        if tj > t:
            Phi, Q = model.step(t, tj)
            K[:, :done] = Phi @ K[:, :done]
            P = sym(Phi @ P @ Phi.T + Q)
            t = tj
        S = sels[j]
        r = S.shape[0]
        cov[done:done + r, :done] = S @ K[:, :done]
        cov[:done, done:done + r] = cov[done:done + r, :done].T
        PS = P @ S.T
        cov[done:done + r, done:done + r] = sym(S @ PS)
        K[:, done:done + r] = PS
        perm[offs[j]:offs[j + 1]] = np.arange(done, done + r)
        done += r
    return cov[np.ix_(perm, perm)]


def _stable_chol(M: np.ndarray) -> np.ndarray:
    try:
        return cholesky(M)
    except NotPositiveDefiniteError:
        # ill-conditioned Gram matrix of densely sampled smooth paths
        w, V = np.linalg.eigh(sym(M))
        w = np.maximum(w, 1e-13 * w.max())
        return np.linalg.cholesky(sym((V * w) @ V.T))


def conditional_cov(joint: np.ndarray, n_target: int) -> np.ndarray:
    """Schur complement of the trailing block in ``joint``."""
    Stt = joint[:n_target, :n_target]
    Stg = joint[:n_target, n_target:]
    Sgg = joint[n_target:, n_target:]
    if Sgg.size == 0:
        return sym(Stt)
    L = _stable_chol(Sgg)
    Y = scipy.linalg.solve_triangular(L, Stg.T, lower=True)
    return sym(Stt - Y.T @ Y)


def schur_conditional(model: DiscreteJointModel, target: tuple, given: Sequence[tuple]) -> np.ndarray:
    """Cov(S X(t) | the given functionals) for target = (t, S)."""
    joint = joint_covariance(model, [target, *given])
    n_t = np.atleast_2d(target[1]).shape[0]
    return conditional_cov(joint, n_t)


def verification_samples(spec: VerificationSpec, m: int) -> list:
    """m uniform samples including both window endpoints (or the single point)."""
    if spec.kind == "point":
        return [(spec.T, spec.mv_at(spec.T))]
    if m < 2:
        raise ValueError("window sampling needs m >= 2")
    return [(float(t), spec.mv_at(float(t))) for t in np.linspace(spec.T_i, spec.T_f, m)]


def measurement_samples(segments: Sequence[SensingSegment], tau: float, dt: float):
    """Midpoint samples of the continuous record: (t, C(t)) and per-sample noise Sigma_N/dt."""
    n = max(1, int(round(tau / dt)))
    h = tau / n
    out, noise = [], []
    for k in range(n):
        t = (k + 0.5) * h
        seg = segment_at(segments, t)
        out.append((t, seg.C_at(t)))
        noise.append(seg.Sigma_N / h)
    return out, noise


def p0_given_samples(system: LinearGaussianSystem, spec: VerificationSpec, m: int) -> np.ndarray:
    """Cov(X_0 | m samples of the verification path)."""
    model = DiscreteJointModel(system)
    return schur_conditional(model, (0.0, np.eye(system.n_X)), verification_samples(spec, m))


def brute_mi(
    system: LinearGaussianSystem,
    segments: Sequence[SensingSegment],
    spec: VerificationSpec,
    tau: float,
    dt: float = 1e-3,
    m: int = 200,
    order: str = "zv",
    max_rows: Optional[int] = None,
) -> float:
    """Gaussian mutual information between verification samples and measurement samples.

    ``order="zv"`` evaluates 1/2 ldet Cov(Z) - 1/2 ldet Cov(Z | V);
    ``order="vz"`` the other way round. Both equal
    1/2 ldet Cov(V) + 1/2 ldet Cov(Z) - 1/2 ldet Cov(V, Z).
    """
    if tau <= 0:
        return 0.0
    zq, znoise = measurement_samples(segments, tau, dt)
    vq = verification_samples(spec, m)
    n_v = sum(np.atleast_2d(S).shape[0] for _, S in vq)
    n_z = sum(np.atleast_2d(S).shape[0] for _, S in zq)
    if max_rows is not None and n_v + n_z > max_rows:
        raise OracleSizeError(
            f"joint covariance needs {n_v + n_z} rows (cap {max_rows}); "
            f"increase dt, reduce m, or shorten tau")
    model = DiscreteJointModel(system)
    joint = joint_covariance(model, [*vq, *zq])
    joint[n_v:, n_v:] += scipy.linalg.block_diag(*znoise)
    if not np.any(joint[:n_v, n_v:]):
        return 0.0
    if order == "zv":
        perm = np.r_[n_v:n_v + n_z, 0:n_v]
        Jz = joint[np.ix_(perm, perm)]
        return 0.5 * ldet(Jz[:n_z, :n_z]) - 0.5 * ldet(conditional_cov(Jz, n_z))
    if order == "vz":
        return 0.5 * _ldet_psd(joint[:n_v, :n_v]) - 0.5 * _ldet_psd(conditional_cov(joint, n_v))
    raise ValueError("order must be 'zv' or 'vz'")


def _ldet_psd(M: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(_stable_chol(M)))))
