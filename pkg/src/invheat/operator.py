"""Matrix-free elliptic operator A = -div(a grad .) on the interior nodes.

The discretization is the standard conservative second-order stencil with
the diffusion coefficient sampled at cell faces.  The operator is symmetric
positive definite in the discrete L2 inner product, which is what every
solver downstream leans on.
"""

from __future__ import annotations

import numpy as np

from .grid import Coefficient, Field, Grid

__all__ = [
    "EllipticOperator",
    "assemble_operator",
    "solve_spd",
    "spectral_estimates",
    "ConvergenceError",
]

DENSE_CAP = 4096


class ConvergenceError(RuntimeError):
    """An iterative kernel hit its iteration cap before its tolerance."""

    def __init__(self, message: str, achieved: float | None = None):
        super().__init__(message)
        self.achieved = achieved


class EllipticOperator:
    """Second-order finite-difference discretization of -div(a grad u).

    Homogeneous Dirichlet values are eliminated, so the operator acts on
    fields of (N-1)^d interior values.  Application is matrix-free: one
    flux difference per axis using per-face coefficient arrays cached at
    assembly.  Instances are immutable once assembled (spectral estimates
    and the dense form are memoized lazily).
    """

    def __init__(self, grid: Grid, coeff: Coefficient):
        self.grid = grid
        self.coeff = coeff
        self._face_coeffs = self._build_face_coeffs()
        diag = np.zeros(grid.shape)
        inv_h2 = float(grid.N) ** 2
        for ax, a_face in enumerate(self._face_coeffs):
            lo = [slice(None)] * grid.dim
            hi = [slice(None)] * grid.dim
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            diag += (a_face[tuple(lo)] + a_face[tuple(hi)]) * inv_h2
        # Gershgorin row bound; off-diagonal magnitudes sum to the diagonal.
        self.norm_bound = 2.0 * float(diag.max())
        self._diag = diag.ravel()
        self._dense = None
        self._eig = None
        self._lambda1 = None
        self._rho = None

    def _build_face_coeffs(self) -> list[np.ndarray]:
        grid = self.grid
        face_coeffs = []
        interior = grid.axis_coords()
        faces = (np.arange(grid.N) + 0.5) * grid.h
        for ax in range(grid.dim):
            axes = [interior] * grid.dim
            axes[ax] = faces
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack(mesh, axis=-1)
            vals = self.coeff(pts)
            if np.any(vals <= 0):
                raise ValueError("coefficient is not positive at a face point")
            if np.any(vals < self.coeff.a_min - 1e-12) or np.any(
                    vals > self.coeff.a_max + 1e-12):
                raise ValueError(
                    "coefficient leaves its declared bounds "
                    f"[{self.coeff.a_min}, {self.coeff.a_max}]")
            face_coeffs.append(vals)
        return face_coeffs

    @property
    def n_dof(self) -> int:
        return self.grid.n_dof

    def matvec(self, values: np.ndarray) -> np.ndarray:
        """Apply A to a flat array of interior values."""
        arr = np.asarray(values, dtype=float).reshape(self.grid.shape)
        out = np.zeros_like(arr)
        inv_h2 = float(self.grid.N) ** 2
        for ax, a_face in enumerate(self._face_coeffs):
            dv = np.diff(arr, axis=ax, prepend=0.0, append=0.0)
            flux = a_face * dv
            out -= np.diff(flux, axis=ax) * inv_h2
        return out.ravel()

    def apply(self, f: Field) -> Field:
        if f.grid != self.grid:
            raise ValueError("field lives on a different grid")
        return Field(self.grid, self.matvec(f.values))

    def dense(self) -> np.ndarray:
        """Dense matrix form, for oracles and small problems only."""
        n = self.n_dof
        if n > DENSE_CAP:
            raise ValueError(f"dense form capped at {DENSE_CAP} dofs, have {n}")
        if self._dense is None:
            mat = np.empty((n, n))
            e = np.zeros(n)
            for j in range(n):
                e[j] = 1.0
                mat[:, j] = self.matvec(e)
                e[j] = 0.0
            self._dense = mat
        return self._dense

    def dense_eig(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigendecomposition of the dense form (ascending eigenvalues)."""
        if self._eig is None:
            self._eig = np.linalg.eigh(self.dense())
        return self._eig

    def lambda1(self, tol: float = 1e-6) -> float:
        """Smallest eigenvalue estimate, cached at the requested tolerance."""
        if self._lambda1 is None or self._lambda1[1] > tol:
            lam, _ = _smallest_eig(self, tol)
            self._lambda1 = (lam, tol)
        return self._lambda1[0]

    def rho(self, tol: float = 1e-6) -> float:
        """Largest eigenvalue estimate, cached at the requested tolerance."""
        if self._rho is None or self._rho[1] > tol:
            self._rho = (_largest_eig(self, tol), tol)
        return self._rho[0]


def assemble_operator(grid: Grid, coeff: Coefficient | float) -> EllipticOperator:
    """Build the elliptic operator for a coefficient (scalars are constant)."""
    if not isinstance(coeff, Coefficient):
        coeff = Coefficient.constant(coeff)
    return EllipticOperator(grid, coeff)


def _cg(apply_fn, b: np.ndarray, rtol: float, maxiter: int,
        x0: np.ndarray | None = None) -> tuple[np.ndarray, int, float]:
    """Plain conjugate gradients on an SPD apply; returns (x, iters, relres).

    Residual tolerance is relative to ||b||; a zero right-hand side returns
    zero immediately.  Raises ConvergenceError at the iteration cap.
    """
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = x0.copy()
        r = b - apply_fn(x)
    p = r.copy()
    rs = float(r @ r)
    target = rtol * bnorm
    for it in range(maxiter):
        if np.sqrt(rs) <= target:
            return x, it, np.sqrt(rs) / bnorm
        Ap = apply_fn(p)
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) <= target:
        return x, maxiter, np.sqrt(rs) / bnorm
    raise ConvergenceError(
        f"cg hit the {maxiter} iteration cap, relative residual "
        f"{np.sqrt(rs) / bnorm:.3e} above {rtol:.1e}",
        achieved=np.sqrt(rs) / bnorm)


def solve_spd(op: EllipticOperator, rhs: Field, rtol: float = 1e-12,
              x0: Field | None = None) -> Field:
    """Solve A x = rhs by conjugate gradients on the matrix-free operator."""
    if rhs.grid != op.grid:
        raise ValueError("right-hand side lives on a different grid")
    maxiter = max(10 * op.n_dof, 50)
    x, _, _ = _cg(op.matvec, rhs.values, rtol, maxiter,
                  x0=None if x0 is None else x0.values)
    return Field(op.grid, x)


def _smallest_eig(op: EllipticOperator, tol: float,
                  max_outer: int = 200) -> tuple[float, np.ndarray]:
    """Inverse iteration with Rayleigh quotients for the smallest eigenvalue.

    The all-ones start vector cannot be orthogonal to the lowest mode (the
    operator is an M-matrix, so that mode has one sign), and the Rayleigh
    quotient converges at the squared eigenvector rate.
    """
    w = op.grid.weight
    x = np.ones(op.n_dof)
    x /= np.sqrt(w) * np.linalg.norm(x)
    lam_prev = None
    hits = 0
    maxiter = max(10 * op.n_dof, 50)
    for _ in range(max_outer):
        y, _, _ = _cg(op.matvec, x, rtol=1e-10, maxiter=maxiter)
        y /= np.sqrt(w) * np.linalg.norm(y)
        lam = w * float(y @ op.matvec(y))
        if lam_prev is not None and abs(lam - lam_prev) <= 0.3 * tol * abs(lam):
            hits += 1
            if hits >= 2:
                return lam, y
        else:
            hits = 0
        lam_prev = lam
        x = y
    raise ConvergenceError(
        f"inverse iteration did not reach relative tolerance {tol:.1e} "
        f"in {max_outer} steps")


def _largest_eig(op: EllipticOperator, tol: float) -> float:
    """Largest eigenvalue via Lanczos with a doubling rank budget.

    Seeded with the checkerboard field, which is rich in the top of the
    spectrum, so the extreme Ritz value settles in a modest number of steps.
    """
    from .krylov import lanczos  # deferred to avoid a module cycle

    n = op.n_dof
    seed = op.grid.checkerboard()
    k = min(16, n)
    prev = None
    while True:
        basis = lanczos(op, seed, k)
        theta = basis.eigenvalues()
        top = float(theta[-1])
        if basis.rank >= n or basis.exact:
            return top
        if prev is not None and abs(top - prev) <= tol * abs(top):
            return top
        prev = top
        if k >= n:
            return top
        k = min(2 * k, n)


def spectral_estimates(op: EllipticOperator, tol: float = 1e-6) -> tuple[float, float]:
    """Estimates (lambda_1, rho) of the extreme eigenvalues of A.

    Results are cached on the operator, keyed by the requested tolerance.
    """
    return op.lambda1(tol), op.rho(tol)
