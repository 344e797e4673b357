"""Right-hand sides of the averaged Euler / Navier-Stokes system.

Velocity form
-------------
With ``A = 1 - alpha^2 C`` and ``m = A u`` the momentum equation reads

    m_t + Lie_u m + X = -grad p + nu Lap u,      F_t + Lie_u F = 0,

where ``Lie_u m = u . grad m + (grad u)^T m`` is the one-form Lie
derivative and ``X = K <> F`` with ``K = alpha^2 (Def u)^2`` is the
F-dependent forcing,

    X = alpha^2 [ -F : grad((Def u)^2) + 2 Div((Def u)^2 F) ].

Expanding ``m_t`` and ``Lie_u m`` through the commutators of ``d/dt`` and
``u . grad`` with C gives the tendency solved for ``u_t``:

    A u_t + grad p = -A(u . grad u) - alpha^2 (T1 + ... + T5) - X + nu Lap u

with ``S(v; G) = Def(v) G + G Def(v)`` and ``Q = sym(grad u grad u)``:

    T1 = Div S(u; Lie_u F)                 (time derivative of C at fixed u)
    T2 = -Div S(u; u . grad F)
    T3 = Div(Q F + F Q)
    T4 = (d_k S_il) d_l u^k,  S = S(u; F)
    T5 = -(grad u)^T C u

so that ``[u . grad, C] u = -(T2 + T3 + T4)``.  Every term is a cubic
product evaluated exactly on the refined grid and truncated once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .grid_fields import Grid2D, OneFormField, SymTensorField, VectorField
from .operators import (MomentumOperator, def_components, sym_anticomm,
                        sym_div_hat, sym_mul)


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    nu: float = 0.0
    momentum_tol: float = 1e-10
    pressure_tol: float = 1e-9
    max_iter: int = 500
    detF_floor: float = 1e-8

    def __post_init__(self):
        for name in ("alpha", "nu"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")

    def operator(self, F: SymTensorField) -> MomentumOperator:
        return MomentumOperator(F, self.alpha, tolerance=self.momentum_tol,
                                max_iterations=self.max_iter, detF_floor=self.detF_floor)


@dataclass(frozen=True, eq=False)
class SimState:
    """Time, velocity, fluctuation tensor and the optional passive carriers.

    ``loop`` holds unwrapped marker coordinates of shape ``(m, 2)``; the
    curve is closed in the plane and wrapped only when sampling fields.
    """

    t: float
    u: VectorField
    F: SymTensorField
    xi_flat: OneFormField | None = None
    loop: np.ndarray | None = field(default=None, repr=False)

    @property
    def grid(self) -> Grid2D:
        return self.u.grid

    def replace(self, **changes) -> "SimState":
        return replace(self, **changes)


# -- shared kinematics ------------------------------------------------------


def _full(S):
    """3-component symmetric tensor -> full (2, 2, ...) array."""
    return np.array([[S[0], S[1]], [S[1], S[2]]])


def _to_sym(M):
    """Symmetric part of a full (2, 2, ...) array, 3-component form."""
    return np.array([M[0, 0], 0.5 * (M[0, 1] + M[1, 0]), M[1, 1]])


def _matmul(A, B):
    return np.einsum("ik...,kj...->ij...", A, B)


class _Kinematics:
    """Fine-grid velocity and tensor quantities shared by the RHS terms."""

    def __init__(self, grid: Grid2D, u: np.ndarray, F: np.ndarray):
        self.g = grid
        self.fg = grid.fine
        self.uh = grid.fft(u)
        self.u = grid.pad_hat(self.uh)
        self.G = grid.pad_hat(grid.grad_hat(self.uh))  # G[i, j] = d_j u^i
        self.Fh = grid.fft(F)
        self.F = grid.pad_hat(self.Fh)

    def trunc(self, b):
        return self.g.fine_to_hat(b)

    def div_sym(self, S_fine):
        """Coarse divergence of a symmetric tensor known on the fine grid."""
        return self.g.ifft(sym_div_hat(self.g, self.trunc(S_fine)))

    def div_full(self, M_fine):
        """Coarse divergence over the second index of a full tensor."""
        h = self.trunc(M_fine)
        g = self.g
        return g.ifft(np.array([g.ikx * h[0, 0] + g.iky * h[0, 1],
                                g.ikx * h[1, 0] + g.iky * h[1, 1]]))

    @cached_property
    def D(self):
        return def_components(self.G)

    @cached_property
    def gradF(self):
        """``gradF[c, k] = d_k F_c`` on the fine grid."""
        return self.g.pad_hat(self.g.grad_hat(self.Fh))

    @cached_property
    def u_dot_gradF(self):
        return self.u[0] * self.gradF[:, 0] + self.u[1] * self.gradF[:, 1]

    @cached_property
    def lie_F(self):
        """``Lie_u F = u . grad F - grad u F - F grad u^T``."""
        GF = _matmul(self.G, _full(self.F))
        return self.u_dot_gradF - 2 * _to_sym(GF)

    @cached_property
    def S(self):
        return sym_anticomm(self.D, self.F)

    @cached_property
    def C_u_fine(self):
        """``C u`` exactly on the fine grid (quadratic, no aliasing)."""
        fg = self.fg
        Sh = fg.fft(self.S)
        return fg.ifft(sym_div_hat(fg, Sh))

    @cached_property
    def D2(self):
        """``(Def u)^2``, 3-component."""
        a, b, c = self.D
        return np.array([a * a + b * b, b * (a + c), b * b + c * c])

    @cached_property
    def advection(self):
        """``u . grad u`` on the fine grid, exact."""
        return self.G[:, 0] * self.u[0] + self.G[:, 1] * self.u[1]


# -- named terms ------------------------------------------------------------


def _kin(u: VectorField, F: SymTensorField) -> _Kinematics:
    return _Kinematics(u.grid, u.data, F.data)


def _vec(grid, a):
    return VectorField(grid, a)


def _term_time_commutator(k: _Kinematics):
    return k.div_sym(sym_anticomm(k.D, k.lie_F))


def _term_convected_F(k: _Kinematics):
    return -k.div_sym(sym_anticomm(k.D, k.u_dot_gradF))


def _term_gradient_square(k: _Kinematics):
    Q = _to_sym(_matmul(k.G, k.G))
    return k.div_sym(sym_anticomm(Q, k.F))


def _term_stress_transport(k: _Kinematics):
    dS = _full(k.fg.grad(k.S))  # dS[i, l, kk] = d_kk S_il
    prod = np.einsum("ilk...,kl...->i...", dS, k.G)
    return k.g.from_fine(prod)


def _term_transpose_C(k: _Kinematics):
    prod = -np.einsum("ji...,j...->i...", k.G, k.C_u_fine)
    return k.g.from_fine(prod)


def _forcing(k: _Kinematics, alpha: float):
    """``X = K <> F`` for ``K = alpha^2 (Def u)^2``."""
    dD2 = k.fg.grad(k.D2)  # (3, 2, ...)
    F = k.F
    x1 = -(F[0] * dD2[0] + 2 * F[1] * dD2[1] + F[2] * dD2[2])
    x2 = 2 * k.div_full(sym_mul(k.D2, F))
    return alpha ** 2 * (k.g.from_fine(x1) + x2)


def time_commutator_term(u: VectorField, F: SymTensorField) -> VectorField:
    """``T1 = Div S(u; Lie_u F)``; with ``F_t = -Lie_u F`` one has
    ``d/dt (C u) = C u_t - T1``."""
    return _vec(u.grid, _term_time_commutator(_kin(u, F)))


def convected_F_term(u: VectorField, F: SymTensorField) -> VectorField:
    """``T2 = -Div S(u; u . grad F)``."""
    return _vec(u.grid, _term_convected_F(_kin(u, F)))


def gradient_square_term(u: VectorField, F: SymTensorField) -> VectorField:
    """``T3 = Div(Q F + F Q)`` with ``Q = sym(grad u grad u)``."""
    return _vec(u.grid, _term_gradient_square(_kin(u, F)))


def stress_transport_term(u: VectorField, F: SymTensorField) -> VectorField:
    """``T4_i = (d_k S_il) d_l u^k`` with ``S = Def u F + F Def u``."""
    return _vec(u.grid, _term_stress_transport(_kin(u, F)))


def transpose_C_term(u: VectorField, F: SymTensorField) -> VectorField:
    """``T5 = -(grad u)^T C u``."""
    return _vec(u.grid, _term_transpose_C(_kin(u, F)))


def forcing_term(u: VectorField, F: SymTensorField, alpha: float) -> VectorField:
    """``X = alpha^2 [-F : grad((Def u)^2) + 2 Div((Def u)^2 F)]``."""
    return _vec(u.grid, _forcing(_kin(u, F), alpha))


def diamond(K: SymTensorField, F: SymTensorField) -> VectorField:
    """``[K <> F]_k = -F^{ij} d_k K_ij + 2 d_i(F^{ij} K_kj)``.

    This sign makes ``<K <> F, u> = <Lie_u F, K>`` for divergence-free u;
    for general u the two sides differ by ``<F : K, div u>``.
    """
    g = K.grid
    Ff = g.to_fine(F.data)
    dK = g.to_fine(g.grad(K.data))  # dK[c, k] = d_k K_c
    x1 = -(Ff[0] * dK[0] + 2 * Ff[1] * dK[1] + Ff[2] * dK[2])
    h = g.fine_to_hat(sym_mul(g.to_fine(K.data), Ff))  # (K F)_{ki}
    x2 = np.array([g.ikx * h[0, 0] + g.iky * h[0, 1], g.ikx * h[1, 0] + g.iky * h[1, 1]])
    return VectorField(g, g.from_fine(x1) + 2 * g.ifft(x2))


def _alpha_terms(k: _Kinematics):
    return (_term_time_commutator(k) + _term_convected_F(k) + _term_gradient_square(k)
            + _term_stress_transport(k) + _term_transpose_C(k))


def _A_of_advection(k: _Kinematics, alpha: float):
    """``A(u . grad u)`` with Def(u . grad u) taken exactly on the fine grid."""
    adv = k.g.from_fine(k.advection)
    if alpha == 0:
        return adv
    Da = def_components(k.fg.grad(k.advection))
    return adv - alpha ** 2 * k.div_sym(sym_anticomm(Da, k.F))


def U_alpha_bracket(u: VectorField, F: SymTensorField, alpha: float) -> VectorField:
    """The braced expression ``alpha^2 (T1 + ... + T5) + X`` of the velocity form."""
    k = _kin(u, F)
    return _vec(u.grid, alpha ** 2 * _alpha_terms(k) + _forcing(k, alpha))


def U_alpha(u: VectorField, F: SymTensorField, params: ModelParams) -> VectorField:
    """``A^{-1}`` applied to :func:`U_alpha_bracket`."""
    op = params.operator(F)
    return _vec(u.grid, op.solve(U_alpha_bracket(u, F, params.alpha).data))


def momentum_residual_forcing(u: VectorField, F: SymTensorField,
                              params: ModelParams) -> VectorField:
    """Right side R of ``A u_t + grad p = R`` assembled term by term."""
    k = _kin(u, F)
    a = params.alpha
    R = -_A_of_advection(k, a) - a ** 2 * _alpha_terms(k) - _forcing(k, a)
    if params.nu:
        R = R + params.nu * u.grid.laplacian(u.data)
    return _vec(u.grid, R)


def momentum_form_forcing(u: VectorField, F: SymTensorField,
                          params: ModelParams) -> VectorField:
    """The same right side built from ``-Lie_u m - X - alpha^2 T1 + nu Lap u``.

    Differs from :func:`momentum_residual_forcing` by a gradient only.
    """
    k = _kin(u, F)
    a = params.alpha
    m = k.u - a ** 2 * k.C_u_fine
    dm = k.fg.grad(m)  # dm[i, j] = d_j m_i
    lie_m = (dm[:, 0] * k.u[0] + dm[:, 1] * k.u[1]
             + np.einsum("ki...,k...->i...", k.G, m))
    R = -k.g.from_fine(lie_m) - _forcing(k, a) - a ** 2 * _term_time_commutator(k)
    if params.nu:
        R = R + params.nu * u.grid.laplacian(u.data)
    return _vec(u.grid, R)


def aaee_rhs(state: SimState, params: ModelParams, route: str = "subspace",
             op: MomentumOperator | None = None, x0: np.ndarray | None = None) -> VectorField:
    """Velocity tendency ``u_t`` of the averaged Euler / Navier-Stokes system.

    Args:
        state: current state; only ``u`` and ``F`` are used.
        params: model parameters.
        route: ``"subspace"`` solves ``A u_t + grad p = R`` by CG on the
            divergence-free subspace; ``"projector"`` evaluates
            ``P_e(-u . grad u - A^{-1}[bracket] + A^{-1}(nu Lap u))`` with the
            Schur-complement Stokes projector.  Both give the same field.
        op: optional prebuilt momentum operator for ``state.F``.
        x0: optional initial guess for the subspace solve.
    """
    from .operators import momentum_invert, stokes_project

    u, F = state.u, state.F
    op = params.operator(F) if op is None else op
    if route == "subspace":
        R = momentum_residual_forcing(u, F, params)
        v, _ = op.solve_divfree(R.data, x0=x0)
        return _vec(u.grid, v)
    if route == "projector":
        g = u.grid
        k = _kin(u, F)
        a = params.alpha
        bracket = _vec(g, _A_of_advection(k, a) + a ** 2 * _alpha_terms(k) + _forcing(k, a))
        # A^{-1} A(u . grad u) rather than the truncated product keeps both
        # routes on the same discrete operator
        w = -momentum_invert(bracket, op).data
        if params.nu:
            w = w + momentum_invert(_vec(g, params.nu * g.laplacian(u.data)), op).data
        v, _ = stokes_project(_vec(g, w), op, pressure_tol=params.pressure_tol)
        return v
    raise ValueError(f"unknown route {route!r}")


# -- transport of F and of the corrector one-form -----------------------------


def generator_matrix(u: VectorField) -> np.ndarray:
    """The 3x3 pointwise matrix ``M(grad u)`` acting on ``(F11, F12, F22)``.

    Returned with shape ``(3, 3, ny, nx)``.  Its trace is ``2 div u``
    written with ``d_2 u^2 = -d_1 u^1``, hence identically zero.
    """
    G = u.grid.grad(u.data)
    u11, u12, u21 = G[0, 0], G[0, 1], G[1, 0]
    z = np.zeros_like(u11)
    return np.array([[2 * u11, 2 * u12, z],
                     [u21, z, u12],
                     [z, 2 * u21, -2 * u11]])


def advect_F_rhs(F: SymTensorField, u: VectorField) -> SymTensorField:
    """``F_t = -u . grad F + M(grad u) F`` for divergence-free u."""
    g = u.grid
    k = _Kinematics(g, u.data, F.data)
    G, Ff = k.G, k.F
    u11, u12, u21 = G[0, 0], G[0, 1], G[1, 0]
    MF = np.array([2 * u11 * Ff[0] + 2 * u12 * Ff[1],
                   u21 * Ff[0] + u12 * Ff[2],
                   2 * u21 * Ff[1] - 2 * u11 * Ff[2]])
    return SymTensorField(g, g.from_fine(MF - k.u_dot_gradF))


def advect_oneform_rhs(xi_flat: OneFormField, u: VectorField) -> OneFormField:
    """``xi_t = -(d_i u^j) xi_j - u^j d_j xi_i``."""
    g = u.grid
    uf = g.to_fine(u.data)
    Gf = g.to_fine(g.grad(u.data))
    xf = g.to_fine(xi_flat.data)
    dxf = g.to_fine(g.grad(xi_flat.data))
    out = -np.einsum("ji...,j...->i...", Gf, xf) - dxf[:, 0] * uf[0] - dxf[:, 1] * uf[1]
    return OneFormField(g, g.from_fine(out))


def corrector_field(u: VectorField, xi: VectorField, alpha: float) -> VectorField:
    """First-order corrected velocity ``u + alpha (Def u) xi``."""
    g = u.grid
    if alpha == 0:
        return VectorField(g, u.data.copy())
    D = _full(g.to_fine(def_components(g.grad(u.data))))
    Dxi = np.einsum("ij...,j...->i...", D, g.to_fine(xi.data))
    return VectorField(g, u.data + alpha * g.from_fine(Dxi))


# -- independent reference right-hand sides -------------------------------------
#
# These use a separate 3/2-rule dealiasing path written directly against
# numpy's complex FFT so they share no code with the terms above.


def _three_halves(grid: Grid2D):
    ny, nx = grid.shape
    My, Mx = 3 * ny // 2, 3 * nx // 2
    kx = np.fft.fftfreq(nx, d=1.0 / nx)
    ky = np.fft.fftfreq(ny, d=1.0 / ny)
    keep = (np.abs(ky)[:, None] < ny / 2) & (np.abs(kx)[None, :] < nx / 2)

    def up(a):
        ah = np.fft.fft2(a) * keep
        big = np.zeros(a.shape[:-2] + (My, Mx), dtype=complex)
        iy = np.where(ky >= 0, ky, My + ky).astype(int)
        ix = np.where(kx >= 0, kx, Mx + kx).astype(int)
        big[..., iy[:, None], ix[None, :]] = ah
        return np.fft.ifft2(big).real * (My * Mx) / (ny * nx)

    def down(b):
        bh = np.fft.fft2(b) * (ny * nx) / (My * Mx)
        iy = np.where(ky >= 0, ky, My + ky).astype(int)
        ix = np.where(kx >= 0, kx, Mx + kx).astype(int)
        return np.fft.ifft2(bh[..., iy[:, None], ix[None, :]] * keep).real

    KX = 2 * np.pi / grid.lx * kx[None, :] * (np.abs(kx)[None, :] < nx / 2)
    KY = 2 * np.pi / grid.ly * ky[:, None] * (np.abs(ky)[:, None] < ny / 2)
    return up, down, KX, KY


def _spectral_ops(grid):
    up, down, KX, KY = _three_halves(grid)

    def dx(a):
        return np.fft.ifft2(1j * KX * np.fft.fft2(a)).real

    def dy(a):
        return np.fft.ifft2(1j * KY * np.fft.fft2(a)).real

    K2 = KX ** 2 + KY ** 2

    def project(w):
        wh = np.fft.fft2(w)
        kw = KX * wh[0] + KY * wh[1]
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(K2 > 0, kw / np.where(K2 > 0, K2, 1), 0)
        return np.array([np.fft.ifft2(wh[0] - KX * q).real, np.fft.ifft2(wh[1] - KY * q).real])

    return up, down, dx, dy, K2, project


def euler_rhs(u: VectorField) -> VectorField:
    """Classical incompressible Euler tendency ``P(-u . grad u)``."""
    up, down, dx, dy, _, project = _spectral_ops(u.grid)
    U = up(u.data)
    adv = np.array([U[0] * up(dx(u.data[c])) + U[1] * up(dy(u.data[c])) for c in (0, 1)])
    return VectorField(u.grid, project(-down(adv)))


def iso_rhs(u: VectorField, alpha: float) -> VectorField:
    """Isotropic averaged Euler tendency with constant-coefficient Helmholtz solve.

    ``(1 - alpha^2 Lap) u_t = P[-u . grad m + alpha^2 (grad u)^T Lap u]``
    with ``m = u - alpha^2 Lap u``.
    """
    up, down, dx, dy, K2, project = _spectral_ops(u.grid)
    lap = np.array([np.fft.ifft2(-K2 * np.fft.fft2(c)).real for c in u.data])
    m = u.data - alpha ** 2 * lap
    U = up(u.data)
    L = up(lap)
    grads = [(up(dx(u.data[c])), up(dy(u.data[c]))) for c in (0, 1)]
    rhs = []
    for i in (0, 1):
        conv = U[0] * up(dx(m[i])) + U[1] * up(dy(m[i]))
        # ((grad u)^T Lap u)_i = d_i u^j Lap u^j
        tr = grads[0][i] * L[0] + grads[1][i] * L[1]
        rhs.append(-conv + alpha ** 2 * tr)
    w = project(down(np.array(rhs)))
    wh = np.fft.fft2(w) / (1 + alpha ** 2 * K2)
    return VectorField(u.grid, np.fft.ifft2(wh).real)
