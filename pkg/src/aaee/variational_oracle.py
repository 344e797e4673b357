"""Finite-difference and duality checks of the variational structure.

The checks here deliberately avoid the fused kernels used by the solver:
Lie derivatives and the literal fourth-rank tensor are assembled with
explicit index loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .diagnostics import energy
from .dynamics import (ModelParams, SimState, aaee_rhs, diamond, euler_rhs, iso_rhs)
from .grid_fields import (SymTensorField, VectorField, make_grid, random_divfree,
                          random_spd, random_band_limited)
from .operators import apply_C, def_components


@dataclass
class OracleReport:
    name: str
    max_rel_error: float
    tolerance: float
    calibration_constant: float | None = None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = "" if self.calibration_constant is None else f" constant={self.calibration_constant:.12g}"
        return f"{status} {self.name}: max_rel_error={self.max_rel_error:.3e} (tol {self.tolerance:.0e}){extra}"

    def to_dict(self) -> dict:
        return {"name": self.name, "max_rel_error": float(self.max_rel_error),
                "tolerance": self.tolerance, "pass": self.passed,
                "calibration_constant": self.calibration_constant,
                "details": self.details}


def lagrangian(u: VectorField, F: SymTensorField, alpha: float) -> float:
    return energy(u, F, alpha)


def _central(fun, h):
    return (fun(h) - fun(-h)) / (2 * h)


def _richardson(fun, h):
    return (4 * _central(fun, h / 2) - _central(fun, h)) / 3


def fd_dL_du(u: VectorField, F: SymTensorField, alpha: float, direction: VectorField):
    """Directional derivative of the Lagrangian in u: ``(finite difference, <A u, du>)``."""
    dn = direction.norm()
    if dn == 0:
        raise ValueError("direction must be non-zero")
    un = u.norm()
    h = 1e-5 * (un if un > 0 else 1.0) / dn
    lhs = _richardson(lambda s: lagrangian(u + s * direction, F, alpha), h)
    Au = u.data - alpha ** 2 * apply_C(u, F).data
    return lhs, u.grid.inner(Au, direction.data)


def dL_dF_tensor(u: VectorField, alpha: float) -> SymTensorField:
    """``alpha^2 (Def u)^2``, covariant."""
    a, b, c = def_components(u.grid.grad(u.data))
    return SymTensorField(u.grid, alpha ** 2 * np.array([a * a + b * b, b * (a + c), b * b + c * c]),
                          covariant=True)


def fd_dL_dF(u: VectorField, F: SymTensorField, alpha: float, direction: SymTensorField,
             coefficient: float = 1.0):
    """Directional derivative of the Lagrangian in F.

    Returns ``(finite difference, coefficient * <alpha^2 (Def u)^2, dF>)``; the
    identity holds with ``coefficient = 1``.
    """
    dn = direction.norm()
    if dn == 0:
        raise ValueError("direction must be non-zero")
    h = 1e-5 * max(F.norm(), 1.0) / dn
    lhs = _richardson(lambda s: lagrangian(u, F + s * direction, alpha), h)
    g = u.grid
    # (Def u)^2 is quadratic: build it on the fine grid before pairing
    Df = g.to_fine(def_components(g.grad(u.data)))
    a, b, c = Df
    D2 = alpha ** 2 * np.array([a * a + b * b, b * (a + c), b * b + c * c])
    dF = g.to_fine(direction.data)
    rhs = g.fine_integrate(D2[0] * dF[0] + 2 * D2[1] * dF[1] + D2[2] * dF[2])
    return lhs, coefficient * rhs


# -- literal fourth-rank tensor --------------------------------------------------


def literal_C_tensor(F: SymTensorField) -> np.ndarray:
    """``C^{ijkl} = 1/4 (F^{lj} d^{ik} + F^{kj} d^{il} + F^{li} d^{jk} + F^{ki} d^{jl})``."""
    Fm = F.matrix()
    d = np.eye(2)
    C = np.zeros((2, 2, 2, 2) + F.grid.shape)
    for i, j, k, l in product(range(2), repeat=4):
        C[i, j, k, l] = 0.25 * (Fm[l, j] * d[i, k] + Fm[k, j] * d[i, l]
                                + Fm[l, i] * d[j, k] + Fm[k, i] * d[j, l])
    return C


def literal_C_apply(u: VectorField, F: SymTensorField) -> VectorField:
    """``(Div[C : Def u])^i = d_j (C^{ijkl} D_kl)`` by explicit index loops."""
    g = u.grid
    C = literal_C_tensor(F)
    D = def_components(g.grad(u.data))
    Dm = np.array([[D[0], D[1]], [D[1], D[2]]])
    Cf, Df = g.to_fine(C), g.to_fine(Dm)
    out = np.zeros((2,) + g.shape)
    for i in range(2):
        for j in range(2):
            flux = sum(Cf[i, j, k, l] * Df[k, l] for k in range(2) for l in range(2))
            out[i] += g.grad(g.from_fine(flux))[j]
    return VectorField(g, out)


def calibration_constant(u: VectorField, F: SymTensorField, alpha: float,
                         direction: VectorField) -> float:
    """Factor c with ``dL(u)[w] = <u, w> - alpha^2 c <Div[C : Def u], w>``.

    The finite-difference derivative of the Lagrangian fixes c; the value is 2
    for every direction since ``C^{ijkl} D_kl = (D F + F D)^{ij} / 2``.
    """
    if alpha == 0:
        raise ValueError("calibration needs alpha > 0")
    lhs, _ = fd_dL_du(u, F, alpha, direction)
    g = u.grid
    num = g.inner(u.data, direction.data) - lhs
    den = alpha ** 2 * g.inner(literal_C_apply(u, F).data, direction.data)
    return num / den


# -- diamond duality ------------------------------------------------------------


def lie_derivative_tensor(F: SymTensorField, u: VectorField) -> np.ndarray:
    """``Lie_u F^{ij} = F^{ij},_k u^k - F^{kj} u^i,_k - F^{ik} u^j,_k`` on the fine grid."""
    g = u.grid
    Fm = g.to_fine(F.matrix())
    dF = g.to_fine(g.grad(F.matrix()))  # dF[i, j, k] = d_k F^ij
    uf = g.to_fine(u.data)
    du = g.to_fine(g.grad(u.data))  # du[i, k] = d_k u^i
    L = np.zeros((2, 2) + uf.shape[1:])
    for i, j, k in product(range(2), repeat=3):
        L[i, j] += dF[i, j, k] * uf[k] - Fm[k, j] * du[i, k] - Fm[i, k] * du[j, k]
    return L


def diamond_residual(K: SymTensorField, F: SymTensorField, u: VectorField,
                     sign: float = 1.0) -> float:
    """Relative mismatch of ``<K <> F, u> = <Lie_u F, K>``.

    ``sign = -1`` evaluates the identity with the opposite sign convention for
    the diamond.
    """
    g = u.grid
    lhs = sign * g.inner(diamond(K, F).data, u.data)
    L = lie_derivative_tensor(F, u)
    Kf = g.to_fine(K.matrix())
    rhs = g.fine_integrate(np.einsum("ij...,ij...->...", L, Kf))
    scale = g.norm(diamond(K, F).data) * u.norm() + np.sqrt(g.fine_integrate(L * L)) * K.norm()
    if scale == 0:
        return 0.0
    return abs(lhs - rhs) / scale


# -- reductions -------------------------------------------------------------------


def _rel(a, b, u):
    """Max-norm mismatch relative to the reference tendency, or to the size
    of the advection term when the reference nearly vanishes (steady flows)."""
    g = u.grid
    scale = max(np.max(np.abs(b)), np.max(np.abs(u.data)) * np.max(np.abs(g.grad(u.data))))
    diff = np.max(np.abs(a - b))
    return float(diff / scale) if scale > 0 else float(diff)


def reduction_checks(u: VectorField, alpha: float, tolerance_euler: float = 1e-12,
                     tolerance_iso: float = 1e-10) -> OracleReport:
    g = u.grid
    identity = SymTensorField.identity(g)
    e = _rel(aaee_rhs(SimState(0.0, u, identity), ModelParams(alpha=0.0)).data, euler_rhs(u).data, u)
    i = _rel(aaee_rhs(SimState(0.0, u, identity), ModelParams(alpha=alpha)).data,
             iso_rhs(u, alpha).data, u)
    worst = max(e / tolerance_euler, i / tolerance_iso) * tolerance_iso
    return OracleReport("reductions", worst, tolerance_iso,
                        details={"euler": e, "isotropic": i})


# -- suite ----------------------------------------------------------------------------


def run_check_suite(n: int = 32, alpha: float = 0.3, seed: int = 0,
                    trials: int = 10) -> list[OracleReport]:
    """Desk-scale variational and invariant checks on random band-limited data."""
    from .dynamics import advect_F_rhs, generator_matrix
    from .operators import MomentumOperator

    rng = np.random.default_rng(seed)
    g = make_grid(n, n, 2 * np.pi, 2 * np.pi)
    kmax = n // 6
    reports = []

    errs = []
    for _ in range(trials):
        u, w = random_divfree(g, rng, kmax), VectorField(g, random_band_limited(g, rng, kmax, 2))
        lhs, rhs = fd_dL_du(u, random_spd(g, rng, kmax), alpha, w)
        errs.append(abs(lhs - rhs) / abs(lhs))
    reports.append(OracleReport("dL/du = (1 - alpha^2 C) u", max(errs), 1e-6))

    errs = []
    for _ in range(trials):
        u = random_divfree(g, rng, kmax)
        dF = SymTensorField(g, random_band_limited(g, rng, kmax, 3))
        lhs, rhs = fd_dL_dF(u, random_spd(g, rng, kmax), alpha, dF)
        errs.append(abs(lhs - rhs) / abs(lhs))
    reports.append(OracleReport("dL/dF = alpha^2 (Def u)^2", max(errs), 1e-6))

    consts = []
    for m in (n, 2 * n):
        gm = make_grid(m, m, 2 * np.pi, 2 * np.pi)
        r = np.random.default_rng(seed + 1)
        u, w = random_divfree(gm, r, 4), random_divfree(gm, r, 4)
        consts.append(calibration_constant(u, random_spd(gm, r, 3), alpha, w))
    reports.append(OracleReport("operator calibration (grid independence)",
                                abs(consts[0] - consts[1]) / abs(consts[1]), 1e-8,
                                calibration_constant=consts[1]))

    errs = []
    for _ in range(5 * trials):
        K = SymTensorField(g, random_band_limited(g, rng, kmax, 3), covariant=True)
        errs.append(diamond_residual(K, random_spd(g, rng, kmax), random_divfree(g, rng, kmax)))
    reports.append(OracleReport("diamond duality", max(errs), 1e-10))

    reports.append(reduction_checks(random_divfree(g, rng, kmax), alpha))

    errs, pos = [], []
    for _ in range(trials):
        op = MomentumOperator(random_spd(g, rng, kmax), alpha)
        u = VectorField(g, random_band_limited(g, rng, kmax, 2))
        w = VectorField(g, random_band_limited(g, rng, kmax, 2))
        a = g.inner(op.apply(u.data), w.data)
        b = g.inner(u.data, op.apply(w.data))
        errs.append(abs(a - b) / (u.norm() * w.norm()))
        pos.append(max(0.0, (u.norm() ** 2 - g.inner(op.apply(u.data), u.data)) / u.norm() ** 2))
    reports.append(OracleReport("momentum operator self-adjoint", max(errs), 1e-10))
    reports.append(OracleReport("momentum operator coercive", max(pos), 0.0))

    tr = []
    for _ in range(2 * trials):
        M = generator_matrix(random_divfree(g, rng, kmax))
        tr.append(float(np.max(np.abs(M[0, 0] + M[1, 1] + M[2, 2]))))
    reports.append(OracleReport("generator trace", max(tr), 1e-12))

    errs = []
    for _ in range(trials):
        u, F = random_divfree(g, rng, kmax), random_spd(g, rng, kmax)
        Ft = advect_F_rhs(F, u).data
        a, b, c = F.data
        ddet = Ft[0] * c + a * Ft[2] - 2 * b * Ft[1]
        det_grad = g.grad(a * c - b * b)
        transport = ddet + u.data[0] * det_grad[0] + u.data[1] * det_grad[1]
        errs.append(float(np.max(np.abs(transport)) / np.max(np.abs(ddet))))
    reports.append(OracleReport("det F transport", max(errs), 1e-10))
    return reports
