"""Derivative chain of the verification variables.

A noise-free observation of V_t over a window is the same as observing
V, dV/dt, ..., d^{K-1}V/dt^{K-1} exactly at T_i plus the K-th derivative,
which is the first one driven by white noise, over the whole window. This
module finds K, the maps H_k with d^kV/dt^k = H_k X (k < K), and the
decorrelated smoother matrices built from them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import cholesky
from .system import LinearGaussianSystem, MatrixPolynomial, VerificationSpec

RANK_TOL = 1e-9


class ChainError(ValueError):
    pass


class UndifferentiableSpecError(ChainError):
    """No derivative up to K_max picks up process noise."""


class AssumptionViolationError(ChainError):
    """Noise-coupling rank changes across the verification window."""


class DecompositionRequiredError(ChainError):
    """Noise-coupling rank is neither zero nor n_V."""


def rank_of_noise_coupling(H_k: np.ndarray, B: np.ndarray, Sigma_W: np.ndarray) -> int:
    M = H_k @ B @ cholesky(Sigma_W, "Sigma_W")
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0]))


@dataclass(frozen=True)
class DerivativeChain:
    system: LinearGaussianSystem
    K: int
    H: tuple  # H_0 .. H_K, each a callable of time

    def H_at(self, k: int, t: float) -> np.ndarray:
        return self.H[k](t)

    def Hstack(self, t: float) -> np.ndarray:
        """Rows of H_0 .. H_{K-1} stacked."""
        return np.vstack([self.H[k](t) for k in range(self.K)])

    def Rbar(self, t: float) -> np.ndarray:
        HB = self.H[self.K - 1](t) @ self.system.B_at(t)
        return HB @ self.system.Sigma_W @ HB.T

    def smoother_terms(self, t: float):
        """(Abar, B Qbar B', H_K' Rbar^-1 H_K) at time t."""
        s = self.system
        B = s.B_at(t)
        Hm = self.H[self.K - 1](t)
        HK = self.H[self.K](t)
        SBt = s.Sigma_W @ B.T
        R = Hm @ B @ SBt @ Hm.T
        Rinv = np.linalg.inv(R)
        G = B @ SBt @ Hm.T @ Rinv
        Abar = s.A_at(t) - G @ HK
        Qbar = s.Sigma_W - SBt @ Hm.T @ Rinv @ Hm @ SBt.T
        BQB = B @ Qbar @ B.T
        return Abar, 0.5 * (BQB + BQB.T), HK.T @ Rinv @ HK

    def Abar(self, t: float) -> np.ndarray:
        return self.smoother_terms(t)[0]

    def Qbar(self, t: float) -> np.ndarray:
        s = self.system
        B = s.B_at(t)
        Hm = self.H[self.K - 1](t)
        SBt = s.Sigma_W @ B.T
        return s.Sigma_W - SBt @ Hm.T @ np.linalg.inv(self.Rbar(t)) @ Hm @ SBt.T

    def Gbar(self, t: float) -> np.ndarray:
        s = self.system
        B = s.B_at(t)
        Hm = self.H[self.K - 1](t)
        return B @ s.Sigma_W @ B.T @ Hm.T @ np.linalg.inv(self.Rbar(t))


def _next_H(system: LinearGaussianSystem, Hk) -> Callable:
    if system.time_invariant and isinstance(Hk, MatrixPolynomial):
        return Hk.derivative(1) + Hk.matmul_const(system.A)
    if isinstance(Hk, MatrixPolynomial):
        dH = Hk.derivative(1)
        return lambda t: dH(t) + Hk(t) @ system.A_at(t)
    raise NotImplementedError(
        "derivative chains beyond first order need a time-invariant A"
    )


def build_chain(
    system: LinearGaussianSystem,
    spec: VerificationSpec,
    K_max: int = 6,
    sample_times: Optional[Sequence[float]] = None,
) -> DerivativeChain:
    """Differentiate V_t = M_V(t) X_t until process noise appears."""
    if spec.kind != "window":
        raise ValueError("derivative chains are defined for window verification")
    if K_max < 1:
        raise ValueError("K_max must be at least 1")
    if sample_times is None:
        sample_times = np.linspace(spec.T_i, spec.T_f, 5)
    n_V = spec.n_V
    H = [spec.MV]
    for k in range(K_max):
        ranks = [rank_of_noise_coupling(H[k](t), system.B_at(t), system.Sigma_W)
                 for t in sample_times]
        H.append(_next_H(system, H[k]))
        if max(ranks) == 0:
            continue
        if len(set(ranks)) > 1:
            raise AssumptionViolationError(
                f"rank of H_{k} B varies over the window: {sorted(set(ranks))}")
        if ranks[0] != n_V:
            raise DecompositionRequiredError(
                f"rank of H_{k} B is {ranks[0]}; need 0 or n_V={n_V} (n_W={system.n_W})")
        return DerivativeChain(system, k + 1, tuple(H))
    raise UndifferentiableSpecError(
        f"no derivative of order <= {K_max} of the verification variables carries noise")
