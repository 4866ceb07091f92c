"""Dense-matrix helpers and the fixed-step RK4 matrix ODE integrator.

Every covariance/information flow in the package runs through
:func:`integrate_matrix_ode`, so forward and backward passes that have to be
coupled share exactly the same node grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

DEFAULT_STEP = 1e-3
GRID_TOL = 1e-9
STIFF_LIMIT = 0.5  # largest h * spectral radius taken in one RK4 step


class DivergenceError(ArithmeticError):
    """Integration produced non-finite values."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.6g}")
        self.time = time


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A matrix that must be SPD failed Cholesky factorization (after jitter)."""

    def __init__(self, message: str, time: Optional[float] = None):
        if time is not None:
            message = f"{message} at t={time:.6g}"
        super().__init__(message)
        self.time = time


class NumericalConsistencyError(ArithmeticError):
    """A derived quantity violates a structural property it must have."""


def sym(X: np.ndarray) -> np.ndarray:
    """Symmetric part over the last two axes."""
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def _jitter(P: np.ndarray) -> float:
    n = P.shape[-1]
    tr = float(np.trace(P))
    return 1e-12 * (abs(tr) / n if tr != 0.0 else 1.0)


def cholesky(P: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, retrying once with a 1e-12*trace/n diagonal jitter."""
    P = np.asarray(P, dtype=float)
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(P + _jitter(P) * np.eye(P.shape[0]))
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(f"{what} is not positive definite") from None


def ldet(P: np.ndarray) -> float:
    """log det of an SPD matrix via its Cholesky factor."""
    L = cholesky(P)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def spd_solve(P: np.ndarray, B: np.ndarray, what: str = "matrix") -> np.ndarray:
    L = cholesky(P, what)
    return scipy.linalg.cho_solve((L, True), B)


def spd_inv(P: np.ndarray, what: str = "matrix") -> np.ndarray:
    return sym(spd_solve(P, np.eye(P.shape[0]), what))


def ldet_positive(M: np.ndarray, what: str = "matrix") -> float:
    """log det of a (possibly nonsymmetric) matrix whose determinant must be > 0.

    LU-based; used for products like I + Q*Delta that are similar to an SPD
    matrix without being symmetric themselves.
    """
    sign, val = np.linalg.slogdet(M)
    if np.any(sign <= 0):
        raise NumericalConsistencyError(f"{what} has non-positive determinant")
    return val


def is_spd(P: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return False
    return True


def as_spd(P, name: str = "matrix") -> np.ndarray:
    """Validate and return a symmetric positive definite matrix."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"{name} must be square, got shape {P.shape}")
    scale = max(np.linalg.norm(P), 1e-300)
    if np.linalg.norm(P - P.T) > 1e-12 * scale:
        raise ValueError(f"{name} is not symmetric")
    cholesky(P, name)
    return sym(P)


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")
        ratio = (self.t_end - self.t_start) / self.step
        if abs(ratio - round(ratio)) > GRID_TOL * max(1.0, ratio):
            raise ValueError(
                f"interval [{self.t_start}, {self.t_end}] is not a multiple of step {self.step}"
            )

    @classmethod
    def fitted(cls, t_start: float, t_end: float, max_step: float = DEFAULT_STEP) -> "TimeGrid":
        """Uniform grid over the interval whose step does not exceed ``max_step``."""
        span = t_end - t_start
        if span <= 0:
            return cls(t_start, t_end, max_step)
        n = max(1, math.ceil(span / max_step - GRID_TOL))
        return cls(t_start, t_end, span / n)

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.step))

    @property
    def times(self) -> np.ndarray:
        n = self.n_steps
        t = self.t_start + self.step * np.arange(n + 1)
        t[-1] = self.t_end
        return t


@dataclass(frozen=True)
class MatrixTrajectory:
    """Matrix values at every node of a grid.

    When node derivatives are stored (the integrator records them for free),
    off-node queries use cubic Hermite interpolation; otherwise linear.
    """

    grid: TimeGrid
    values: np.ndarray
    derivs: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.values) != self.grid.n_steps + 1:
            raise ValueError("trajectory length does not match the grid")

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def __len__(self):
        return len(self.values)

    def at(self, t: float) -> np.ndarray:
        g = self.grid
        tol = GRID_TOL * max(1.0, abs(g.t_end))
        if t < g.t_start - tol or t > g.t_end + tol:
            raise ValueError(f"t={t} outside [{g.t_start}, {g.t_end}]")
        n = g.n_steps
        if n == 0:
            return self.values[0]
        s = (t - g.t_start) / g.step
        k = min(max(int(math.floor(s)), 0), n - 1)
        u = min(max(s - k, 0.0), 1.0)
        if u <= 1e-12:
            return self.values[k]
        if u >= 1.0 - 1e-12:
            return self.values[k + 1]
        y0, y1 = self.values[k], self.values[k + 1]
        if self.derivs is None:
            return (1.0 - u) * y0 + u * y1
        h = g.step
        d0, d1 = self.derivs[k], self.derivs[k + 1]
        u2, u3 = u * u, u * u * u
        return ((2 * u3 - 3 * u2 + 1) * y0 + (u3 - 2 * u2 + u) * h * d0
                + (-2 * u3 + 3 * u2) * y1 + (u3 - u2) * h * d1)


Rhs = Callable[[float, np.ndarray], np.ndarray]


def rk4_step(rhs: Rhs, t: float, X: np.ndarray, h: float, k1: Optional[np.ndarray] = None):
    """One classical RK4 step of signed size ``h``; returns (X_next, k1)."""
    if k1 is None:
        k1 = rhs(t, X)
    k2 = rhs(t + 0.5 * h, X + (0.5 * h) * k1)
    k3 = rhs(t + 0.5 * h, X + (0.5 * h) * k2)
    k4 = rhs(t + h, X + h * k3)
    return X + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4), k1


def integrate_matrix_ode(
    rhs: Rhs,
    X0: np.ndarray,
    grid: TimeGrid,
    direction: str = "forward",
    symmetric: bool = False,
    stiffness: Optional[Callable[[float, np.ndarray], float]] = None,
) -> MatrixTrajectory:
    """Fixed-step RK4 solution of dX/dt = rhs(t, X) on every grid node.

    ``direction="backward"`` treats ``X0`` as the value at ``grid.t_end`` and
    steps toward ``grid.t_start``. Values are always stored in increasing
    time order. With ``symmetric=True`` the state (any leading batch shape,
    matrices on the last two axes) is re-symmetrized after every step.

    ``stiffness(t, X)`` is an optional bound on the local Jacobian spectral
    radius; a grid step whose h * radius exceeds STIFF_LIMIT is split into
    equal RK4 substeps. Nodes stay where the grid puts them.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    X = np.array(X0, dtype=float)
    if symmetric:
        X = sym(X)
    times = grid.times
    n = grid.n_steps
    values = np.empty((n + 1,) + X.shape)
    derivs = np.empty_like(values)
    if direction == "forward":
        order = range(n)
        idx0, h = 0, grid.step
    else:
        order = range(n, 0, -1)
        idx0, h = n, -grid.step
    values[idx0] = X
    for k in order:
        t = times[k]
        kn = k + 1 if h > 0 else k - 1
        m = 1
        if stiffness is not None:
            m = max(1, int(math.ceil(abs(h) * stiffness(t, X) / STIFF_LIMIT)))
        if m == 1:
            X, d = rk4_step(rhs, t, X, h)
        else:
            hs, d = h / m, None
            for j in range(m):
                X, k1 = rk4_step(rhs, t + j * hs, X, hs)
                d = k1 if d is None else d
                if symmetric:
                    X = sym(X)
        derivs[k] = d
        if symmetric:
            X = sym(X)
        if not np.all(np.isfinite(X)):
            raise DivergenceError("non-finite state during integration", times[kn])
        values[kn] = X
    kl = n if direction == "forward" else 0
    derivs[kl] = rhs(times[kl], values[kl])
    if symmetric:
        derivs = sym(derivs)
    return MatrixTrajectory(grid, values, derivs)


def riccati_stiffness(A_at, info_at, index=None):
    """Spectral-radius bound 2 (|A| + lambda_max(Q C' Sigma_N^-1 C)) for a Riccati flow.

    ``index`` picks Q out of a stacked state. A cheap Frobenius bound is
    tried first; the eigenvalue is only computed when it could matter.
    """
    def rho(t, X):
        Q = X if index is None else X[index]
        A, info = A_at(t), info_at(t)
        a = float(np.sqrt(np.sum(A * A)))
        b = float(np.sqrt(np.sum(Q * Q) * np.sum(info * info)))
        if b <= a:
            return 2.0 * (a + b)
        lam = np.linalg.eigvals(Q @ info).real.max()
        return 2.0 * (a + max(float(lam), 0.0))
    return rho


def first_non_spd(stack: np.ndarray, times: np.ndarray, tol: float = 0.0,
                  scale: Optional[float] = None) -> Optional[float]:
    """Time of the first matrix in ``stack`` whose smallest eigenvalue is <= tol*scale.

    ``scale`` defaults to the largest eigenvalue magnitude in the stack.
    """
    eig = np.linalg.eigvalsh(sym(stack))
    if scale is None:
        scale = max(float(np.abs(eig).max()), 1e-300)
    bad = np.nonzero(eig[:, 0] <= tol * scale)[0]
    return float(times[bad[0]]) if len(bad) else None


def state_transition(system, t1: float, t2: float, step: float = DEFAULT_STEP) -> np.ndarray:
    """Phi(t2, t1) from dPhi/dt = A(t) Phi, Phi(t1, t1) = I."""
    if t2 < t1:
        raise ValueError("state_transition requires t2 >= t1")
    n = system.n_X
    if t2 == t1:
        return np.eye(n)
    traj = integrate_matrix_ode(lambda t, F: system.A_at(t) @ F, np.eye(n),
                                TimeGrid.fitted(t1, t2, step))
    return traj.final
