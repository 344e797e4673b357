"""Deformation tensor, the fluctuation-weighted elliptic operator and solvers.

Normalization of the fourth-rank operator
-----------------------------------------
The operator is fixed by the Lagrangian

    L(u, F) = 1/2 int |u|^2 + 2 alpha^2 F^{jl} D_ij D_il,    D = Def u,

through ``<(1 - alpha^2 C) u, w> = dL(u)[w]`` for *every* direction ``w``.
This gives

    C u = Div(D F + F D),

which reduces to the Laplacian on divergence-free fields when ``F = I``.
With the symmetrized tensor
``C^{ijkl} = 1/4 (F^{lj} g^{ik} + F^{kj} g^{il} + F^{li} g^{jk} + F^{ki} g^{jl})``
one has ``C^{ijkl} D_kl = 1/2 (D F + F D)^{ij}``, so ``C u = 2 Div[C : Def u]``;
the factor 2 is the calibration constant reported by
:func:`aaee.variational_oracle.calibration_constant`.
"""

from __future__ import annotations

import numpy as np

from .grid_fields import Grid2D, ScalarField, SymTensorField, VectorField


class SolverError(RuntimeError):
    """An iterative solve did not reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SPDError(ValueError):
    """The fluctuation tensor is not uniformly positive definite."""


# -- array kernels ----------------------------------------------------------


def velocity_gradient(grid: Grid2D, u: np.ndarray) -> np.ndarray:
    """``G[i, j] = d_j u^i`` with shape ``(2, 2, ny, nx)``."""
    return grid.grad(u)


def def_components(G: np.ndarray) -> np.ndarray:
    return np.array([G[0, 0], 0.5 * (G[0, 1] + G[1, 0]), G[1, 1]])


def sym_mul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pointwise product ``A B`` of two symmetric 2x2 fields (3-component),
    returned as a full ``(2, 2, ...)`` array."""
    a, b, c = A
    p, q, r = B
    return np.array([[a * p + b * q, a * q + b * r], [b * p + c * q, b * q + c * r]])


def sym_anticomm(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``A B + B A`` for symmetric A, B, returned in 3-component form."""
    a, b, c = A
    p, q, r = B
    return np.array([2 * (a * p + b * q), a * q + b * r + b * p + c * q, 2 * (b * q + c * r)])


def sym_div_hat(grid: Grid2D, Sh: np.ndarray) -> np.ndarray:
    """Spectral divergence (over the second index) of a symmetric tensor."""
    return np.array([grid.ikx * Sh[0] + grid.iky * Sh[1], grid.ikx * Sh[1] + grid.iky * Sh[2]])


def apply_C_arrays(grid: Grid2D, u: np.ndarray, F_fine: np.ndarray) -> np.ndarray:
    """``Div(D F + F D)`` with the product formed on the refined grid."""
    D = def_components(grid.grad(u))
    S = sym_anticomm(grid.to_fine(D), F_fine)
    return grid.ifft(sym_div_hat(grid, grid.fine_to_hat(S)))


# -- public operations ------------------------------------------------------


def def_tensor(u: VectorField) -> SymTensorField:
    """Rate of deformation ``D_ij = (d_j u_i + d_i u_j) / 2`` (covariant)."""
    G = velocity_gradient(u.grid, u.data)
    return SymTensorField(u.grid, def_components(G), covariant=True)


def apply_C(u: VectorField, F: SymTensorField) -> VectorField:
    g = u.grid
    return VectorField(g, apply_C_arrays(g, u.data, g.to_fine(F.data)))


class MomentumOperator:
    """The SPD map ``u -> u - alpha^2 C_F u`` together with its solvers.

    The preconditioner is the exact inverse of the operator for the
    isotropic tensor ``cbar * I``, where ``cbar`` is the domain mean of the
    eigenvalues of F.  It treats the divergence-free and gradient parts of
    a field separately since ``C_{cI}`` acts as ``c Lap`` on the former and
    ``2 c Lap`` on the latter.
    """

    def __init__(self, F: SymTensorField, alpha: float, tolerance: float = 1e-10,
                 max_iterations: int = 500, detF_floor: float = 1e-8):
        if not (np.isfinite(alpha) and alpha >= 0):
            raise ValueError("alpha must be finite and >= 0")
        if not F.is_finite():
            raise SPDError("fluctuation tensor contains non-finite values")
        if not np.all(F.data[0] > 0) or float(np.min(F.det().data)) < detF_floor:
            raise SPDError(
                f"fluctuation tensor not SPD: min F11={np.min(F.data[0]):.3e}, "
                f"min det F={np.min(F.det().data):.3e} (floor {detF_floor:.1e})")
        self.F = F
        self.grid = F.grid
        self.alpha = float(alpha)
        self.tolerance = float(tolerance)
        self.max_iterations = int(max_iterations)
        self.detF_floor = detF_floor
        self.F_fine = self.grid.to_fine(F.data)
        self.cbar = float(np.mean(F.data[0] + F.data[2]) / 2)
        a2c = self.alpha ** 2 * self.cbar * self.grid.k2
        self._pre_sol = 1.0 / (1.0 + a2c)
        self._pre_grad = 1.0 / (1.0 + 2 * a2c)

    # operator ---------------------------------------------------------------

    def C(self, u: np.ndarray) -> np.ndarray:
        return apply_C_arrays(self.grid, u, self.F_fine)

    def apply(self, u: np.ndarray) -> np.ndarray:
        if self.alpha == 0:
            return u.copy()
        return u - self.alpha ** 2 * self.C(u)

    def __call__(self, u: VectorField) -> VectorField:
        return VectorField(self.grid, self.apply(u.data))

    # preconditioner -------------------------------------------------------------

    def _precondition(self, r: np.ndarray, solenoidal_only: bool = False) -> np.ndarray:
        g = self.grid
        rh = g.fft(r)
        d = (g.ikx * rh[0] + g.iky * rh[1]) * g.inv_k2  # potential part symbol
        gx, gy = g.ikx * d, g.iky * d  # = -(gradient part)
        sx, sy = rh[0] + gx, rh[1] + gy  # solenoidal part
        if solenoidal_only:
            zx, zy = sx * self._pre_sol, sy * self._pre_sol
        else:
            zx = sx * self._pre_sol - gx * self._pre_grad
            zy = sy * self._pre_sol - gy * self._pre_grad
        return np.array([g.ifft(zx), g.ifft(zy)])

    # solvers -------------------------------------------------------------

    def _pcg(self, rhs, x0, apply, precond, tol, label):
        g = self.grid
        bnorm = g.norm(rhs)
        if bnorm == 0:
            return np.zeros_like(rhs), 0, 0.0
        x = np.zeros_like(rhs) if x0 is None else x0.copy()
        r = rhs - apply(x) if x0 is not None else rhs.copy()
        rnorm = g.norm(r)
        if rnorm <= tol * bnorm:
            return x, 0, rnorm / bnorm
        z = precond(r)
        p = z.copy()
        rz = g.inner(r, z)
        if rz == 0:
            # residual lies in the preconditioner's null space (roundoff-level rhs)
            return x, 0, rnorm / bnorm
        for it in range(1, self.max_iterations + 1):
            Ap = apply(p)
            step = rz / g.inner(p, Ap)
            x += step * p
            r -= step * Ap
            rnorm = g.norm(r)
            if rnorm <= tol * bnorm:
                return x, it, rnorm / bnorm
            z = precond(r)
            rz_new = g.inner(r, z)
            if rz_new == 0:
                return x, it, rnorm / bnorm
            p = z + (rz_new / rz) * p
            rz = rz_new
        raise SolverError(
            f"{label}: no convergence in {self.max_iterations} iterations "
            f"(relative residual {rnorm / bnorm:.3e} > {tol:.1e})",
            residual=rnorm / bnorm, iterations=self.max_iterations)

    def solve(self, v: np.ndarray, tol: float | None = None, x0=None) -> np.ndarray:
        """Solve ``(1 - alpha^2 C) u = v`` by preconditioned CG."""
        if self.alpha == 0:
            return v.copy()
        tol = self.tolerance if tol is None else tol
        x, _, _ = self._pcg(v, x0, self.apply, self._precondition, tol, "momentum solve")
        return x

    def solve_divfree(self, R: np.ndarray, tol: float | None = None, x0=None):
        """Stokes problem ``(1 - alpha^2 C) v + grad p = R``, ``div v = 0``.

        CG runs on the divergence-free subspace (the operator ``P A P`` with
        P the flat Leray projector is SPD there).  Returns ``(v, p)`` with
        p of zero mean.
        """
        g = self.grid
        tol = self.tolerance if tol is None else tol
        PR = g.leray(R)
        if self.alpha == 0:
            v = PR
        else:
            x0 = None if x0 is None else g.leray(x0)
            v, _, _ = self._pcg(
                PR, x0, lambda w: g.leray(self.apply(w)),
                lambda r: self._precondition(r, solenoidal_only=True), tol, "Stokes solve")
        resid_h = g.fft(R - self.apply(v))
        ph = -(g.ikx * resid_h[0] + g.iky * resid_h[1]) * g.inv_k2
        return v, g.ifft(ph)


def momentum_invert(v: VectorField, op: MomentumOperator) -> VectorField:
    """Return u with ``||(1 - alpha^2 C) u - v|| <= tol ||v||``."""
    return VectorField(v.grid, op.solve(v.data))


def stokes_project(w: VectorField, op: MomentumOperator,
                   pressure_tol: float = 1e-9) -> tuple[VectorField, ScalarField]:
    """Projector ``P_e(w) = w - (1 - alpha^2 C)^{-1} grad p`` onto div-free fields.

    The pressure solves the Schur complement system
    ``-div A^{-1} grad p = -div w`` by CG; every outer step calls the
    momentum solve.  Inner solves run two orders of magnitude tighter than
    the outer tolerance so the outer iteration sees a symmetric operator.
    """
    g = op.grid
    inner_tol = max(min(op.tolerance, 1e-2 * pressure_tol), 1e-14)
    divw = g.div(w.data)
    if op.alpha == 0:
        P = g.leray(w.data)
        ph = -g.fft(divw) * g.inv_k2
        return VectorField(g, P), ScalarField(g, g.ifft(ph))

    def schur(p):
        return -g.div(op.solve(g.grad(p), tol=inner_tol))

    pre = (1.0 + 2 * op.alpha ** 2 * op.cbar * g.k2) * g.inv_k2

    def precond(r):
        return g.ifft(g.fft(r) * pre)

    rhs = -divw
    rhs = rhs - np.mean(rhs)
    solver = _ScalarCG(g, op.max_iterations)
    p = solver.run(rhs, schur, precond, pressure_tol, "pressure (Schur) solve")
    p -= np.mean(p)
    v = w.data - op.solve(g.grad(p), tol=inner_tol)
    return VectorField(g, v), ScalarField(g, p)


class _ScalarCG:
    def __init__(self, grid, max_iterations):
        self.grid = grid
        self.max_iterations = max_iterations

    def run(self, b, apply, precond, tol, label):
        g = self.grid
        bnorm = g.norm(b)
        x = np.zeros_like(b)
        if bnorm == 0:
            return x
        r = b.copy()
        z = precond(r)
        p = z.copy()
        rz = g.inner(r, z)
        for _ in range(self.max_iterations):
            Ap = apply(p)
            step = rz / g.inner(p, Ap)
            x += step * p
            r -= step * Ap
            rnorm = g.norm(r)
            if rnorm <= tol * bnorm:
                return x
            z = precond(r)
            rz_new = g.inner(r, z)
            if rz_new == 0:
                return x, it, rnorm / bnorm
            p = z + (rz_new / rz) * p
            rz = rz_new
        raise SolverError(f"{label}: no convergence (relative residual {rnorm / bnorm:.3e})",
                          residual=rnorm / bnorm, iterations=self.max_iterations)
