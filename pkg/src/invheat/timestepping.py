"""Crank-Nicolson time stepping for dv/dt + A v = f(t).

Each step solves (I + tau A/2) v_new = (I - tau A/2) v_old + tau f(mid)
by conjugate gradients on the shifted matrix-free operator, warm-started
from the previous state.  The scheme is unconditionally stable and second
order in time; its one-step amplification on an eigenmode is
(1 - tau lambda/2) / (1 + tau lambda/2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import Field, Grid
from .operator import EllipticOperator, _cg

__all__ = ["SourceTerm", "Trajectory", "cn_step", "cn_solve_ivp",
           "propagator_norm"]


@dataclass(frozen=True)
class SourceTerm:
    """Time-dependent source f(t) sampled as a field on a grid.

    ``fn(t, grid)`` must return a Field on that grid.  ``smoothness`` is a
    declaration (the quadrature error models assume at least C1 in time),
    not something that gets verified.
    """

    fn: Callable[[float, Grid], Field]
    smoothness: str = "C2"

    def __call__(self, t: float, grid: Grid) -> Field:
        f = self.fn(t, grid)
        if f.grid != grid:
            raise ValueError("source term returned a field on the wrong grid")
        return f

    @classmethod
    def zero(cls) -> "SourceTerm":
        return cls(fn=lambda t, grid: grid.zeros(), smoothness="Cinf")

    @classmethod
    def from_pointwise(cls, fn: Callable[[float, np.ndarray], np.ndarray],
                       smoothness: str = "C2") -> "SourceTerm":
        """Build from a vectorized pointwise rule fn(t, points)."""
        return cls(fn=lambda t, grid: grid.field(fn(t, grid.interior_points())),
                   smoothness=smoothness)

    @classmethod
    def separable(cls, time_factor: Callable[[float], float],
                  profile: Callable[[np.ndarray], np.ndarray],
                  smoothness: str = "C2") -> "SourceTerm":
        """Build g(t)·w(x) from a scalar factor and a pointwise profile.

        The profile is sampled once per grid and cached; quadrature and
        time marching evaluate the source at many instants, and for a
        separable source only the scalar factor changes between them.
        """
        cache: dict = {}

        def fn(t: float, grid) -> Field:
            w = cache.get(grid)
            if w is None:
                w = grid.field_from(profile)
                cache[grid] = w
            return float(time_factor(t)) * w

        return cls(fn=fn, smoothness=smoothness)


@dataclass(frozen=True)
class Trajectory:
    """States v^0 ... v^M of a time march, tau apart."""

    grid: Grid
    tau: float
    states: np.ndarray  # shape (M+1, n_dof)

    def __post_init__(self):
        if self.states.ndim != 2 or self.states.shape[1] != self.grid.n_dof:
            raise ValueError("trajectory states do not match the grid")

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1

    def time(self, m: int) -> float:
        return m * self.tau

    def state(self, m: int) -> Field:
        return Field(self.grid, self.states[m])

    @property
    def final(self) -> Field:
        return self.state(self.steps)


def cn_step(op: EllipticOperator, v: Field, t: float, tau: float,
            f: SourceTerm, rtol: float = 1e-12) -> Field:
    """One Crank-Nicolson step from time t to t + tau."""
    if tau <= 0:
        raise ValueError(f"step size must be positive, got {tau}")
    if v.grid != op.grid:
        raise ValueError("state lives on a different grid")
    half = 0.5 * tau
    f_mid = f(t + half, op.grid)
    rhs = v.values - half * op.matvec(v.values) + tau * f_mid.values

    def shifted(x):
        return x + half * op.matvec(x)

    maxiter = max(10 * op.n_dof, 50)
    x, _, _ = _cg(shifted, rhs, rtol, maxiter, x0=v.values)
    return Field(op.grid, x)


def cn_solve_ivp(op: EllipticOperator, v0: Field, f: SourceTerm, T: float,
                 M: int, rtol: float = 1e-12) -> Trajectory:
    """March M Crank-Nicolson steps over [0, T] from initial state v0."""
    if T <= 0:
        raise ValueError(f"horizon must be positive, got {T}")
    if M < 1:
        raise ValueError(f"need at least one step, got M = {M}")
    if v0.grid != op.grid:
        raise ValueError("initial state lives on a different grid")
    tau = T / M
    states = np.empty((M + 1, op.n_dof))
    states[0] = v0.values
    v = v0
    for m in range(M):
        v = cn_step(op, v, m * tau, tau, f, rtol=rtol)
        states[m + 1] = v.values
    return Trajectory(grid=op.grid, tau=tau, states=states)


def propagator_norm(op: EllipticOperator, tau: float) -> float:
    """|1 - tau lambda_1/2| / (1 + tau lambda_1/2), the one-step damping
    of the slowest mode, from the cached lambda_1 estimate.

    This is the classical contraction constant of the shooting iteration;
    note it tracks the slowest mode only, which is the binding one whenever
    tau^2 lambda_1 rho < 4.
    """
    if tau <= 0:
        raise ValueError(f"step size must be positive, got {tau}")
    lam1 = op.lambda1()
    x = 0.5 * tau * lam1
    return abs(1.0 - x) / (1.0 + x)
