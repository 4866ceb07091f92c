"""Continuous-time linear-Gaussian system, sensing, and verification models."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import as_spd

MatrixLike = Union[np.ndarray, Callable[[float], np.ndarray]]


def _const_or_fn(M: MatrixLike):
    if callable(M):
        return M, None
    arr = np.atleast_2d(np.asarray(M, dtype=float))
    return (lambda t, _a=arr: _a), arr


class MatrixPolynomial:
    """M(t) = sum_d coeffs[d] * (t - origin)**d with exact derivatives."""

    def __init__(self, coeffs, origin: float = 0.0):
        c = np.asarray(coeffs, dtype=float)
        if c.ndim == 2:
            c = c[None]
        if c.ndim != 3 or len(c) == 0:
            raise ValueError("coefficients must be a non-empty list of equal-shape matrices")
        self.coeffs = c
        self.origin = float(origin)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def shape(self):
        return self.coeffs.shape[1:]

    def __call__(self, t: float, order: int = 0) -> np.ndarray:
        return self.derivative(order).evaluate(t)

    def evaluate(self, t: float) -> np.ndarray:
        s = t - self.origin
        out = self.coeffs[-1].copy()
        for c in self.coeffs[-2::-1]:
            out = out * s + c
        return out

    def derivative(self, order: int = 1) -> "MatrixPolynomial":
        if order < 0:
            raise ValueError("derivative order must be non-negative")
        c = self.coeffs
        for _ in range(order):
            if len(c) == 1:
                return MatrixPolynomial(np.zeros_like(c), self.origin)
            c = c[1:] * np.arange(1, len(c))[:, None, None]
        return MatrixPolynomial(c, self.origin)

    def matmul_const(self, A: np.ndarray) -> "MatrixPolynomial":
        return MatrixPolynomial(self.coeffs @ A, self.origin)

    def __add__(self, other: "MatrixPolynomial") -> "MatrixPolynomial":
        if other.origin != self.origin:
            raise ValueError("polynomials must share an origin")
        n = max(len(self.coeffs), len(other.coeffs))
        out = np.zeros((n,) + self.shape)
        out[: len(self.coeffs)] += self.coeffs
        out[: len(other.coeffs)] += other.coeffs
        return MatrixPolynomial(out, self.origin)


class LinearGaussianSystem:
    """dX/dt = A(t) X + B(t) W with white W of intensity Sigma_W; X_0 ~ N(mu0, P0).

    ``A`` and ``B`` may be constant arrays or callables of time.
    """

    def __init__(self, A: MatrixLike, B: MatrixLike, Sigma_W, P0, mu0=None):
        self.A_at, self._A_const = _const_or_fn(A)
        self.B_at, self._B_const = _const_or_fn(B)
        self.Sigma_W = as_spd(Sigma_W, "Sigma_W")
        self.P0 = as_spd(P0, "P0")
        self.n_X = self.P0.shape[0]
        self.n_W = self.Sigma_W.shape[0]
        self.mu0 = np.zeros(self.n_X) if mu0 is None else np.asarray(mu0, dtype=float)
        A0, B0 = self.A_at(0.0), self.B_at(0.0)
        if A0.shape != (self.n_X, self.n_X):
            raise ValueError(f"A must be {self.n_X}x{self.n_X}, got {A0.shape}")
        if B0.shape != (self.n_X, self.n_W):
            raise ValueError(f"B must be {self.n_X}x{self.n_W}, got {B0.shape}")
        if self.time_invariant:
            self._BSB = self._B_const @ self.Sigma_W @ self._B_const.T

    @property
    def time_invariant(self) -> bool:
        return self._A_const is not None and self._B_const is not None

    @property
    def A(self) -> np.ndarray:
        if self._A_const is None:
            raise AttributeError("A is time-varying; use A_at(t)")
        return self._A_const

    @property
    def B(self) -> np.ndarray:
        if self._B_const is None:
            raise AttributeError("B is time-varying; use B_at(t)")
        return self._B_const

    def noise_cov_at(self, t: float) -> np.ndarray:
        """B(t) Sigma_W B(t)'."""
        if self.time_invariant:
            return self._BSB
        B = self.B_at(t)
        return B @ self.Sigma_W @ B.T

    def with_prior(self, P0) -> "LinearGaussianSystem":
        A = self._A_const if self._A_const is not None else self.A_at
        B = self._B_const if self._B_const is not None else self.B_at
        return LinearGaussianSystem(A, B, self.Sigma_W, P0, self.mu0)


@dataclass(frozen=True)
class SensingSegment:
    """Continuous measurement Z = C(t) X + N over [t_start, t_end]."""

    t_start: float
    t_end: float
    C: MatrixLike
    Sigma_N: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Sigma_N", as_spd(self.Sigma_N, "Sigma_N"))
        object.__setattr__(self, "_Sinv", np.linalg.inv(self.Sigma_N))

    def C_at(self, t: float) -> np.ndarray:
        C = self.C(t) if callable(self.C) else self.C
        return np.atleast_2d(np.asarray(C, dtype=float))

    def info_at(self, t: float) -> np.ndarray:
        """C' Sigma_N^{-1} C."""
        C = self.C_at(t)
        return C.T @ self._Sinv @ C

    @property
    def Sigma_N_inv(self) -> np.ndarray:
        return self._Sinv


class SensingModel:
    """Maps a sensing decision to the measurement segments covering [0, tau].

    Subclasses interpret the decision (a sensor schedule, a platform path);
    this base class covers a fixed C with no decision at all.
    """

    def __init__(self, C: MatrixLike, Sigma_N):
        self.C = C
        self.Sigma_N = as_spd(Sigma_N, "Sigma_N")

    @property
    def n_Z(self) -> int:
        return self.Sigma_N.shape[0]

    def segments(self, decision, tau: float) -> list[SensingSegment]:
        return [SensingSegment(0.0, tau, self.C, self.Sigma_N)]


def segment_at(segments: Sequence[SensingSegment], t: float) -> SensingSegment:
    for seg in segments:
        if seg.t_start <= t <= seg.t_end:
            return seg
    raise ValueError(f"no sensing segment covers t={t}")


@dataclass(frozen=True)
class VerificationSpec:
    """V_t = M_V(t) X_t at a point T or over a window [T_i, T_f]."""

    MV: MatrixPolynomial
    kind: str
    T: Optional[float] = None
    T_i: Optional[float] = None
    T_f: Optional[float] = None
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind == "point":
            if self.T is None or self.T < 0:
                raise ValueError("point verification needs T >= 0")
        elif self.kind == "window":
            if self.T_i is None or self.T_f is None or not (self.T_f > self.T_i >= 0):
                raise ValueError("window verification needs T_f > T_i >= 0")
        else:
            raise ValueError("kind must be 'point' or 'window'")

    @classmethod
    def point(cls, M, T: float, label: str = "") -> "VerificationSpec":
        return cls(MatrixPolynomial(np.atleast_2d(M)), "point", T=T, label=label)

    @classmethod
    def window(cls, M, T_i: float, T_f: float, label: str = "") -> "VerificationSpec":
        MV = M if isinstance(M, MatrixPolynomial) else MatrixPolynomial(np.atleast_2d(M))
        return cls(MV, "window", T_i=T_i, T_f=T_f, label=label)

    @classmethod
    def linear_blend(cls, M_i, M_f, T_i: float, T_f: float, label: str = "") -> "VerificationSpec":
        """M_V moving linearly from M_i at T_i to M_f at T_f."""
        M_i = np.atleast_2d(np.asarray(M_i, dtype=float))
        M_f = np.atleast_2d(np.asarray(M_f, dtype=float))
        slope = (M_f - M_i) / (T_f - T_i)
        return cls(MatrixPolynomial([M_i, slope], origin=T_i), "window", T_i=T_i, T_f=T_f, label=label)

    @property
    def n_V(self) -> int:
        return self.MV.shape[0]

    @property
    def start(self) -> float:
        return self.T if self.kind == "point" else self.T_i

    def mv_at(self, t: float, derivative_order: int = 0) -> np.ndarray:
        lo, hi = (self.T, self.T) if self.kind == "point" else (self.T_i, self.T_f)
        tol = 1e-9 * max(1.0, abs(hi))
        if t < lo - tol or t > hi + tol:
            raise ValueError(f"t={t} outside the verification support [{lo}, {hi}]")
        return self.MV(t, derivative_order)
