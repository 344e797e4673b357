"""Right-hand sides: named terms, reductions, transport and consistency."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aaee.dynamics import (ModelParams, SimState, U_alpha, U_alpha_bracket, aaee_rhs,
                           advect_F_rhs, advect_oneform_rhs, convected_F_term, corrector_field,
                           diamond, euler_rhs, forcing_term, generator_matrix,
                           gradient_square_term, iso_rhs, momentum_form_forcing,
                           momentum_residual_forcing, stress_transport_term,
                           time_commutator_term, transpose_C_term)
from aaee.grid_fields import (OneFormField, SymTensorField, VectorField, make_grid,
                              random_band_limited, random_divfree, random_spd)
from aaee.operators import MomentumOperator, apply_C, def_tensor
from aaee.variational_oracle import lie_derivative_tensor

TWO_PI = 2 * np.pi
N, BIG = 16, 64


def embed(a, grid, big):
    """Exact values of a band-limited coarse field on a finer grid."""
    h = np.fft.rfft2(a) * grid.nyquist_mask
    out = np.zeros(a.shape[:-2] + (big.ny, big.nx // 2 + 1), dtype=complex)
    m, k = grid.ny // 2, grid.nx // 2
    out[..., :m, :k] = h[..., :m, :k]
    out[..., big.ny - m + 1:, :k] = h[..., m + 1:, :k]
    return np.fft.irfft2(out, s=big.shape) * (big.nx * big.ny) / (grid.nx * grid.ny)


def restrict(b, grid, big):
    """Truncate a fine field to the coarse band (Nyquist dropped)."""
    h = np.fft.rfft2(b) * (grid.nx * grid.ny) / (big.nx * big.ny)
    m, k = grid.ny // 2, grid.nx // 2
    out = np.zeros(b.shape[:-2] + (grid.ny, grid.nx // 2 + 1), dtype=complex)
    out[..., :m, :k] = h[..., :m, :k]
    out[..., m + 1:, :k] = h[..., big.ny - m + 1:, :k]
    return np.fft.irfft2(out, s=grid.shape)


class Pointwise:
    """Plain pointwise calculus on a grid fine enough that nothing aliases."""

    def __init__(self, big):
        self.g = big

    def d(self, a):
        return self.g.grad(a)  # a[..., k] = d_k

    def sym(self, M):
        return 0.5 * (M + np.swapaxes(M, 0, 1))

    def mat(self, A, B):
        return np.einsum("ik...,kj...->ij...", A, B)

    def div2(self, M):
        d = self.d(M)
        return d[:, 0, 0] + d[:, 1, 1]

    def C(self, u, F):
        D = self.sym(self.d(u))
        return self.div2(self.mat(D, F) + self.mat(F, D))

    def advect(self, u, a):
        d = self.d(a)
        return sum(u[k] * d[..., k, :, :] for k in range(2))


@pytest.fixture
def setup():
    g = make_grid(N, N, TWO_PI, TWO_PI)
    big = make_grid(BIG, BIG, TWO_PI, TWO_PI)
    r = np.random.default_rng(42)
    u = random_divfree(g, r, 7)
    F = random_spd(g, r, 7, amplitude=0.5)
    return g, big, u, F


def full(F):
    return F.matrix()


class TestNamedTerms:
    def test_commutator_identity(self, setup):
        g, big, u, F = setup
        P = Pointwise(big)
        U, Fm = embed(u.data, g, big), embed(full(F), g, big)
        Cu = P.C(U, Fm)
        comm = P.advect(U, Cu) - P.C(P.advect(U, U), Fm)
        want = restrict(comm, g, big)
        got = -(convected_F_term(u, F).data + gradient_square_term(u, F).data
                + stress_transport_term(u, F).data)
        assert np.max(np.abs(got - want)) < 1e-11 * np.max(np.abs(want))

    def test_time_commutator(self, setup):
        g, big, u, F = setup
        P = Pointwise(big)
        U, Fm = embed(u.data, g, big), embed(full(F), g, big)
        G = P.d(U)
        lie = P.advect(U, Fm) - P.mat(G, Fm) - np.swapaxes(P.mat(G, Fm), 0, 1)
        want = restrict(P.C(U, lie), g, big)
        got = time_commutator_term(u, F).data
        assert np.max(np.abs(got - want)) < 1e-11 * np.max(np.abs(want))

    def test_transpose_term(self, setup):
        g, big, u, F = setup
        P = Pointwise(big)
        U, Fm = embed(u.data, g, big), embed(full(F), g, big)
        Cu = P.C(U, Fm)
        G = P.d(U)
        want = restrict(-np.einsum("ji...,j...->i...", G, Cu), g, big)
        got = transpose_C_term(u, F).data
        assert np.max(np.abs(got - want)) < 1e-11 * np.max(np.abs(want))

    def test_forcing_is_diamond_of_def_square(self, setup):
        g, big, u, F = setup
        alpha = 0.4
        P = Pointwise(big)
        U, Fm = embed(u.data, g, big), embed(full(F), g, big)
        D = P.sym(P.d(U))
        D2 = P.mat(D, D)
        dD2 = P.d(D2)
        x1 = -np.einsum("ij...,ijk...->k...", Fm, dD2)
        x2 = 2 * P.div2(P.mat(D2, Fm))
        want = restrict(alpha ** 2 * (x1 + x2), g, big)
        got = forcing_term(u, F, alpha).data
        assert np.max(np.abs(got - want)) < 1e-11 * np.max(np.abs(want))

    def test_forcing_matches_diamond_when_resolved(self, setup):
        g, _, _, F = setup
        # (Def u)^2 of a kmax-3 field fits in the 16-point band
        u = random_divfree(g, np.random.default_rng(8), 3)
        a, b, c = def_tensor(u).data
        K = SymTensorField(g, 0.16 * np.array([a * a + b * b, b * (a + c), b * b + c * c]),
                           covariant=True)
        got = diamond(K, F).data
        want = forcing_term(u, F, 0.4).data
        assert np.max(np.abs(got - want)) < 1e-11 * np.max(np.abs(want))

    @pytest.mark.parametrize("term", [time_commutator_term, convected_F_term,
                                      gradient_square_term, stress_transport_term,
                                      transpose_C_term])
    def test_terms_vanish_at_rest(self, setup, term):
        g, _, _, F = setup
        zero = VectorField(g, np.zeros((2,) + g.shape))
        assert np.all(term(zero, F).data == 0)

    def test_t1_plus_t2_drops_convective_derivative(self, setup):
        g, big, u, F = setup
        P = Pointwise(big)
        U, Fm = embed(u.data, g, big), embed(full(F), g, big)
        GF = P.mat(P.d(U), Fm)
        want = -restrict(P.C(U, GF + np.swapaxes(GF, 0, 1)), g, big)
        got = time_commutator_term(u, F).data + convected_F_term(u, F).data
        assert np.max(np.abs(got - want)) < 1e-11 * np.max(np.abs(want))


class TestAaeeRhs:
    def test_zero_velocity(self, grid32, rng):
        u = VectorField(grid32, np.zeros((2, 32, 32)))
        out = aaee_rhs(SimState(0.0, u, random_spd(grid32, rng, 3)), ModelParams(alpha=0.3))
        assert np.all(out.data == 0)

    def test_alpha_zero_is_euler(self, grid64, rng):
        u = random_divfree(grid64, rng, 12)
        got = aaee_rhs(SimState(0.0, u, random_spd(grid64, rng, 4)), ModelParams(alpha=0.0))
        want = euler_rhs(u)
        assert np.max(np.abs(got.data - want.data)) < 1e-12 * np.max(np.abs(want.data))

    @pytest.mark.parametrize("alpha", [0.1, 0.5])
    def test_identity_tensor_is_isotropic(self, grid64, rng, alpha):
        u = random_divfree(grid64, rng, 12)
        got = aaee_rhs(SimState(0.0, u, SymTensorField.identity(grid64)), ModelParams(alpha=alpha))
        want = iso_rhs(u, alpha)
        assert np.max(np.abs(got.data - want.data)) < 1e-10 * np.max(np.abs(want.data))

    def test_divergence_free(self, grid32, rng):
        u = random_divfree(grid32, rng, 8)
        out = aaee_rhs(SimState(0.0, u, random_spd(grid32, rng, 5)), ModelParams(alpha=0.4, nu=0.01))
        assert np.max(np.abs(out.div().data)) < 1e-10 * out.max_abs()

    def test_routes_agree(self, grid32, rng):
        u = random_divfree(grid32, rng, 8)
        s = SimState(0.0, u, random_spd(grid32, rng, 5))
        p = ModelParams(alpha=0.4, nu=0.02)
        a = aaee_rhs(s, p).data
        b = aaee_rhs(s, p, route="projector").data
        assert grid32.norm(a - b) < 1e-8 * grid32.norm(a)
        with pytest.raises(ValueError):
            aaee_rhs(s, p, route="nope")

    def test_momentum_forms_differ_by_gradient(self, grid32, rng):
        u = random_divfree(grid32, rng, 8)
        F = random_spd(grid32, rng, 5)
        p = ModelParams(alpha=0.4, nu=0.01)
        R1 = momentum_residual_forcing(u, F, p).data
        R2 = momentum_form_forcing(u, F, p).data
        assert grid32.norm(grid32.leray(R1 - R2)) < 1e-12 * grid32.norm(R1)

    def test_U_alpha_definition(self, grid32, rng):
        u = random_divfree(grid32, rng, 8)
        F = random_spd(grid32, rng, 5)
        p = ModelParams(alpha=0.4)
        Ua = U_alpha(u, F, p).data
        op = MomentumOperator(F, 0.4)
        assert grid32.norm(op.apply(Ua) - U_alpha_bracket(u, F, 0.4).data) < 1e-9 * grid32.norm(Ua)
        assert np.all(U_alpha_bracket(u, F, 0.0).data == 0)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.05, 0.8))
    def test_momentum_balance_residual_is_gradient(self, seed, alpha):
        """d/dt m + Lie_u m + X = -grad p + nu Lap u along the computed tendencies.

        m_t is formed from the bilinear map (u, F) -> u - alpha^2 C_F u with
        the computed u_t and F_t; Lie_u m and X come from separate code.
        """
        g = make_grid(32, 32, TWO_PI, TWO_PI)
        r = np.random.default_rng(seed)
        u, F = random_divfree(g, r, 5), random_spd(g, r, 5)
        nu = 0.01
        p = ModelParams(alpha=alpha, nu=nu, momentum_tol=1e-13)
        ut = aaee_rhs(SimState(0.0, u, F), p)
        Ft = advect_F_rhs(F, u)
        mt = ut.data - alpha ** 2 * (apply_C(ut, F).data + apply_C(u, Ft).data)
        m = u.data - alpha ** 2 * apply_C(u, F).data
        dm = g.grad(m)
        G = g.grad(u.data)
        lie = np.einsum("ij...,j...->i...", dm, u.data) + np.einsum("ki...,k...->i...", G, m)
        a, b, c = def_tensor(u).data
        K = SymTensorField(g, alpha ** 2 * np.array([a * a + b * b, b * (a + c), b * b + c * c]))
        X = diamond(K, F).data
        resid = mt + lie + X - nu * g.laplacian(u.data)
        assert g.norm(g.leray(resid)) <= 1e-8 * g.norm(lie)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.05, 0.8))
    def test_energy_rate_vanishes(self, seed, alpha):
        """<dL/du, u_t> + <dL/dF, F_t> = 0 for the inviscid tendencies."""
        g = make_grid(32, 32, TWO_PI, TWO_PI)
        r = np.random.default_rng(seed)
        u, F = random_divfree(g, r, 5), random_spd(g, r, 5)
        p = ModelParams(alpha=alpha, momentum_tol=1e-13)
        ut = aaee_rhs(SimState(0.0, u, F), p).data
        Ft = advect_F_rhs(F, u).data
        m = u.data - alpha ** 2 * apply_C(u, F).data
        a, b, c = g.to_fine(def_tensor(u).data)
        K = alpha ** 2 * np.array([a * a + b * b, b * (a + c), b * b + c * c])
        Ftf = g.to_fine(Ft)
        rate = g.inner(m, ut) + g.fine_integrate(K[0] * Ftf[0] + 2 * K[1] * Ftf[1] + K[2] * Ftf[2])
        scale = g.norm(m) * g.norm(ut)
        assert abs(rate) < 1e-10 * scale


class TestAdvectF:
    def test_zero_velocity(self, grid32, rng):
        u = VectorField(grid32, np.zeros((2, 32, 32)))
        assert np.all(advect_F_rhs(random_spd(grid32, rng, 3), u).data == 0)

    def test_shear_identity(self, grid32):
        _, Y = grid32.coords()
        u = VectorField(grid32, np.array([np.sin(Y), 0 * Y]))
        Ft = advect_F_rhs(SymTensorField.identity(grid32), u).data
        assert np.max(np.abs(Ft[0])) < 1e-12 and np.max(np.abs(Ft[2])) < 1e-12
        assert np.max(np.abs(Ft[1] - np.cos(Y))) < 1e-12

    def test_matches_index_formula(self, grid32, rng):
        u, F = random_divfree(grid32, rng, 8), random_spd(grid32, rng, 8)
        L = grid32.from_fine(lie_derivative_tensor(F, u))
        want = -np.array([L[0, 0], L[0, 1], L[1, 1]])
        got = advect_F_rhs(F, u).data
        assert np.max(np.abs(got - want)) < 1e-12 * np.max(np.abs(want))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_generator_is_traceless(self, seed):
        g = make_grid(16, 16, TWO_PI, TWO_PI)
        M = generator_matrix(random_divfree(g, np.random.default_rng(seed), 5))
        assert np.max(np.abs(M[0, 0] + M[1, 1] + M[2, 2])) <= 1e-12

    def test_det_transport(self, grid32, rng):
        u, F = random_divfree(grid32, rng, 5), random_spd(grid32, rng, 5)
        Ft = advect_F_rhs(F, u).data
        a, b, c = F.data
        ddet = Ft[0] * c + a * Ft[2] - 2 * b * Ft[1]
        gd = grid32.grad(a * c - b * b)
        assert np.max(np.abs(ddet + u.data[0] * gd[0] + u.data[1] * gd[1])) < 1e-10


class TestOneForm:
    def test_zero_velocity(self, grid32, rng):
        xi = OneFormField(grid32, random_band_limited(grid32, rng, 4, 2))
        u = VectorField(grid32, np.zeros((2, 32, 32)))
        assert np.all(advect_oneform_rhs(xi, u).data == 0)

    def test_commutes_with_exterior_derivative(self, grid32, rng):
        phi = random_band_limited(grid32, rng, 5)
        u = random_divfree(grid32, rng, 5)
        got = advect_oneform_rhs(OneFormField(grid32, grid32.grad(phi)), u).data
        gphi = grid32.grad(phi)
        want = -grid32.grad(u.data[0] * gphi[0] + u.data[1] * gphi[1])
        assert np.max(np.abs(got - want)) < 1e-10 * np.max(np.abs(want))


class TestCorrector:
    def test_alpha_zero(self, grid32, rng):
        u = random_divfree(grid32, rng, 4)
        xi = VectorField(grid32, random_band_limited(grid32, rng, 4, 2))
        assert np.array_equal(corrector_field(u, xi, 0.0).data, u.data)

    def test_shear(self, grid32):
        _, Y = grid32.coords()
        u = VectorField(grid32, np.array([np.sin(Y), 0 * Y]))
        xi = VectorField(grid32, np.array([0 * Y, 1 + 0 * Y]))
        out = corrector_field(u, xi, 0.1).data
        assert np.max(np.abs(out[0] - np.sin(Y) - 0.05 * np.cos(Y))) < 1e-12
        assert np.max(np.abs(out[1])) < 1e-12

    def test_zero_fluctuation(self, grid32, rng):
        u = random_divfree(grid32, rng, 4)
        xi = VectorField(grid32, np.zeros((2, 32, 32)))
        assert np.allclose(corrector_field(u, xi, 0.3).data, u.data, atol=1e-14, rtol=0)


class TestReferenceRhs:
    def test_zero(self, grid32):
        u = VectorField(grid32, np.zeros((2, 32, 32)))
        assert np.all(iso_rhs(u, 0.3).data == 0)

    def test_alpha_zero_is_euler(self, grid32, rng):
        u = random_divfree(grid32, rng, 8)
        assert np.allclose(iso_rhs(u, 0.0).data, euler_rhs(u).data, atol=1e-12, rtol=0)

    def test_shear_is_steady(self, grid32):
        _, Y = grid32.coords()
        u = VectorField(grid32, np.array([np.sin(Y), 0 * Y]))
        assert np.max(np.abs(iso_rhs(u, 0.5).data)) <= 1e-10
        assert np.max(np.abs(euler_rhs(u).data)) <= 1e-12

    def test_euler_energy_conserving(self, grid32, rng):
        u = random_divfree(grid32, rng, 8)
        assert abs(grid32.inner(u.data, euler_rhs(u).data)) < 1e-10 * u.norm() ** 2
