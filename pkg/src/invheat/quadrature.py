"""Quadrature rules for the propagated source integral.

All three rules approximate Conv(f) = integral_0^T exp(-(T-s)A) f(s) ds on
M uniform panels, but their error behavior differs sharply:

* the naive midpoint rule is formally second order in tau with a prefactor
  that carries A^2, so it degrades as the grid refines;
* the exponential-increment rule replaces the frozen propagator by the
  exact panel increment (exp(-(T-t_k)A) - exp(-(T-t_{k-1})A)) A^{-1}, which
  drops the stiff prefactor at the cost of one order in tau;
* Richardson extrapolation of the increment rule restores second order
  while keeping the benign prefactor.

Each rule also evaluates the A-image integral A Conv(f) when asked
(``a_image=True``).  That variant feeds the source recovery p = -A v(0):
applying A analytically inside the quadrature keeps every scalar function
bounded on the spectrum, where forming Conv first and multiplying by A
afterwards would amplify the approximation error by the operator norm.

Rules consume an applier object providing ``expm(t, w)`` and, ideally,
``expm_multi`` and ``conv_increment`` so that both exponentials of a panel
come from one basis or eigendecomposition.  A bare callable (t, w) -> Field
also works; the inverse then falls back to a conjugate gradient solve.
Summation is sequential and deterministic.
"""

from __future__ import annotations

import numpy as np

from .grid import Field
from .operator import EllipticOperator, solve_spd
from .timestepping import SourceTerm

__all__ = ["convolve_naive_midpoint", "convolve_increment",
           "convolve_richardson"]


def _check(op: EllipticOperator, T: float, M: int):
    if T <= 0:
        raise ValueError(f"horizon must be positive, got {T}")
    if M < 1:
        raise ValueError(f"need at least one panel, got M = {M}")


def convolve_naive_midpoint(op: EllipticOperator, applier, f: SourceTerm,
                            T: float, M: int, a_image: bool = False) -> Field:
    """Midpoint rule: tau * sum_k exp(-(T - t_{k-1/2}) A) f(t_{k-1/2})."""
    _check(op, T, M)
    expm = applier.expm if hasattr(applier, "expm") else applier
    tau = T / M
    acc = op.grid.zeros()
    for j in range(M):
        t_mid = (j + 0.5) * tau
        w = f(t_mid, op.grid)
        if w.norm() == 0.0:
            continue
        if a_image:
            w = op.apply(w)
        acc = acc + tau * expm(T - t_mid, w)
    return acc


def convolve_increment(op: EllipticOperator, applier, f: SourceTerm,
                       T: float, M: int, a_image: bool = False) -> Field:
    """Exponential-increment rule
    sum_k (exp(-(T-t_k)A) - exp(-(T-t_{k-1})A)) A^{-1} f(t_{k-1/2}).

    The panel increment and the inverse are evaluated together on a single
    basis when the applier supports it; for constant-in-time sources the
    sum telescopes to (I - exp(-TA)) A^{-1} f and the rule is exact up to
    the applier and solver tolerances.  In the A-image variant the inverse
    cancels and each panel is a plain difference of two exponentials.
    """
    _check(op, T, M)
    tau = T / M
    acc = op.grid.zeros()
    fused = hasattr(applier, "conv_increment")
    expm = applier.expm if hasattr(applier, "expm") else applier
    for j in range(M):
        w = f((j + 0.5) * tau, op.grid)
        if w.norm() == 0.0:
            continue
        t_new = T - (j + 1) * tau
        t_old = T - j * tau
        if fused:
            acc = acc + applier.conv_increment(t_new, t_old, w,
                                               a_image=a_image)
        elif a_image:
            acc = acc + expm(t_new, w) - expm(t_old, w)
        else:
            w_inv = solve_spd(op, w)
            acc = acc + expm(t_new, w_inv) - expm(t_old, w_inv)
    return acc


def convolve_richardson(op: EllipticOperator, applier, f: SourceTerm,
                        T: float, M: int, a_image: bool = False) -> Field:
    """Richardson extrapolation 2 I_{2M} - I_M of the increment rule."""
    _check(op, T, M)
    fine = convolve_increment(op, applier, f, T, 2 * M, a_image=a_image)
    coarse = convolve_increment(op, applier, f, T, M, a_image=a_image)
    return 2.0 * fine - coarse
