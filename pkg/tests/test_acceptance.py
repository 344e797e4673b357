"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Criteria 1 and 2 additionally carry strict-xfail tests for the literal
coefficient and sign conventions, which disagree with the finite-difference
and integration-by-parts oracles by a factor of 2 and a sign respectively.
"""

import time

import numpy as np
import pytest

from aaee.config import SimConfig, initial_state
from aaee.diagnostics import MaterialLoop, loop_integral
from aaee.dynamics import ModelParams, SimState, generator_matrix
from aaee.grid_fields import (SymTensorField, VectorField, make_grid, random_band_limited,
                              random_divfree, random_spd)
from aaee.io import read_snapshot, write_snapshot
from aaee.timestepping import rk4_step, run_simulation
from aaee.variational_oracle import diamond_residual, fd_dL_dF, fd_dL_du, reduction_checks

TWO_PI = 2 * np.pi
ANISO = dict(f0="constant_spd", f0_a=2.0, f0_b=0.3, f0_c=1.0)


@pytest.fixture
def report(pytestconfig):
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")

    def emit(criterion, ok, detail):
        with capman.global_and_fixture_disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
    return emit


def anisotropic_run(dt_max, out=None, t_end=1.0, nu=0.0, snap_every=5, write=True):
    # cfl 0.25 gives dt ~ 0.0245 here; dt_max = 1/41 makes the step exactly uniform
    cfg = SimConfig(nx=64, ny=64, lx=TWO_PI, ly=TWO_PI, alpha=0.3, nu=nu, t_end=t_end,
                    cfl=0.25, dt_max=dt_max, ic="taylor_green", loop="circle",
                    loop_markers=128, corrector=True, corrector_xi0="cellular",
                    snap_every=snap_every, output_dir=str(out), **ANISO)
    return run_simulation(cfg, out_dir=out, write=write)


@pytest.fixture(scope="module")
def base_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("base")
    t0 = time.perf_counter()
    result = anisotropic_run(1 / 41, out)
    return result, out, time.perf_counter() - t0


# -- 1: variational identities -------------------------------------------------------


def _fd_triples(seed=0, trials=10):
    g = make_grid(32, 32, TWO_PI, TWO_PI)
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        yield (random_divfree(g, rng, 5), random_spd(g, rng, 5),
               VectorField(g, random_band_limited(g, rng, 5, 2)),
               SymTensorField(g, random_band_limited(g, rng, 5, 3)))


def test_criterion_1_variational_identity(report):
    t0 = time.perf_counter()
    du_err, dF_err = [], []
    for u, F, w, dF in _fd_triples():
        lhs, rhs = fd_dL_du(u, F, 0.4, w)
        du_err.append(abs(lhs - rhs) / abs(lhs))
        lhs, rhs = fd_dL_dF(u, F, 0.4, dF)
        dF_err.append(abs(lhs - rhs) / abs(lhs))
    elapsed = time.perf_counter() - t0
    ok = max(du_err) <= 1e-6 and max(dF_err) <= 1e-6 and elapsed < 60
    report(1, ok, f"dL/du rel err {max(du_err):.2e}, dL/dF = alpha^2 (Def u)^2 rel err "
                  f"{max(dF_err):.2e} (tol 1e-6), {elapsed:.1f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason="doubled coefficient 2 alpha^2 (Def u)^2 is off by 2")
def test_criterion_1_literal_doubled_coefficient(report):
    errs = []
    for u, F, _, dF in _fd_triples():
        lhs, rhs = fd_dL_dF(u, F, 0.4, dF, coefficient=2.0)
        errs.append(abs(lhs - rhs) / abs(lhs))
    report("1 (literal 2 alpha^2 form)", max(errs) <= 1e-6, f"rel err {max(errs):.2e}")
    assert max(errs) <= 1e-6


# -- 2: diamond duality ----------------------------------------------------------------


def _diamond_triples(seed=1, trials=50):
    g = make_grid(32, 32, TWO_PI, TWO_PI)
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        yield (SymTensorField(g, random_band_limited(g, rng, 5, 3), covariant=True),
               random_spd(g, rng, 5), random_divfree(g, rng, 5))


def test_criterion_2_diamond_duality(report):
    t0 = time.perf_counter()
    worst = max(diamond_residual(K, F, u) for K, F, u in _diamond_triples())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 60
    report(2, ok, f"max residual {worst:.2e} over 50 triples (tol 1e-10), {elapsed:.1f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason="opposite diamond sign convention breaks the duality")
def test_criterion_2_literal_sign(report):
    worst = max(diamond_residual(K, F, u, sign=-1.0) for K, F, u in _diamond_triples())
    report("2 (literal sign)", worst <= 1e-10, f"max residual {worst:.2e}")
    assert worst <= 1e-10


# -- 3: reductions ---------------------------------------------------------------------


def test_criterion_3_reductions(report):
    t0 = time.perf_counter()
    g = make_grid(64, 64, TWO_PI, TWO_PI)
    rng = np.random.default_rng(3)
    reps = [reduction_checks(random_divfree(g, rng, 10), 0.4) for _ in range(5)]
    eul = max(r.details["euler"] for r in reps)
    iso = max(r.details["isotropic"] for r in reps)
    elapsed = time.perf_counter() - t0
    ok = eul <= 1e-12 and iso <= 1e-10 and elapsed < 60
    report(3, ok, f"alpha=0 vs Euler {eul:.2e} (tol 1e-12), F=I vs isotropic {iso:.2e} "
                  f"(tol 1e-10), {elapsed:.1f}s")
    assert ok


# -- 4, 5, 7, 8: the anisotropic run ----------------------------------------------------


def test_criterion_4_energy(base_run, report):
    result, _, elapsed = base_run
    E = np.array([r.energy for r in result.records])
    drift = float(np.max(np.abs(E - E[0])) / E[0])
    ok = drift <= 1e-6 and elapsed < 600 and result.state.t == pytest.approx(1.0)
    report(4, ok, f"relative energy drift {drift:.2e} (tol 1e-6) over {result.steps} steps, "
                  f"{elapsed:.1f}s")
    assert ok


def test_criterion_5_detF(base_run, report):
    result, _, _ = base_run
    lo = np.array([r.detF_min for r in result.records])
    hi = np.array([r.detF_max for r in result.records])
    drift = float(max(np.max(np.abs(lo - lo[0])), np.max(np.abs(hi - hi[0]))))
    ok = drift <= 1e-4
    report(5, ok, f"det F min/max drift {drift:.2e} (tol 1e-4)")
    assert ok


def test_criterion_6_generator_trace(report):
    g = make_grid(64, 64, TWO_PI, TWO_PI)
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        M = generator_matrix(random_divfree(g, rng, 12))
        worst = max(worst, float(np.max(np.abs(np.trace(M)))))
    ok = worst <= 1e-12
    report(6, ok, f"max |trace M(grad u)| {worst:.2e} over 20 fields (tol 1e-12)")
    assert ok


def test_criterion_7_kelvin(base_run, tmp_path, report):
    coarse, _, elapsed_coarse = base_run
    t0 = time.perf_counter()
    fine = anisotropic_run(1 / 82, tmp_path, t_end=0.5, write=False)
    elapsed = elapsed_coarse + time.perf_counter() - t0
    # compare at the same time t = 20/41, steps 20 and 40
    r1, r2 = coarse.records[20], fine.records[40]
    assert r1.t == pytest.approx(r2.t, abs=1e-12)
    k1, k2 = r1.kelvin_residual, r2.kelvin_residual
    ratio = k1 / k2
    extrapolated = abs(4 * k2 - k1) / 3
    ok = ratio >= 3.5 and extrapolated <= 1e-5 and elapsed < 900
    report(7, ok, f"residual {k1:.2e} -> {k2:.2e}, ratio {ratio:.2f} (>= 3.5), "
                  f"extrapolated {extrapolated:.2e} (tol 1e-5), {elapsed:.1f}s")
    assert ok


def test_criterion_8_corrector_transport(base_run, report):
    _, out, _ = base_run
    values, times = [], []
    for path in sorted(out.glob("snapshot_*.aae")):
        s = read_snapshot(path)
        values.append(loop_integral(s.grid, s.xi_flat.data, MaterialLoop(s.loop)))
        times.append(s.t)
    values = np.array(values)
    drift = float(np.max(np.abs(values - values[0])))
    ok = drift <= 1e-6 and times[0] == 0 and times[-1] == pytest.approx(1.0) and len(times) >= 5
    report(8, ok, f"loop integral of the corrector one-form drifts {drift:.2e} over "
                  f"{len(times)} snapshots (tol 1e-6)")
    assert ok


# -- 9, 10: convergence ----------------------------------------------------------------


def test_criterion_9_viscous_limit(report, tmp_path):
    t0 = time.perf_counter()
    finals = {nu: anisotropic_run(1 / 40, tmp_path, t_end=0.5, nu=nu, write=False).state.u
              for nu in (0.0, 1e-2, 5e-3, 2.5e-3)}
    errs = [finals[nu].grid.norm(finals[nu].data - finals[0.0].data) for nu in (1e-2, 5e-3, 2.5e-3)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    elapsed = time.perf_counter() - t0
    ok = (errs[0] > errs[1] > errs[2] and all(1.6 <= r <= 2.4 for r in ratios)
          and elapsed < 1200)
    report(9, ok, "||u_nu - u_0|| = " + ", ".join(f"{e:.3e}" for e in errs)
           + f"; ratios {ratios[0]:.3f}, {ratios[1]:.3f} (in [1.6, 2.4]), {elapsed:.1f}s")
    assert ok


def test_criterion_10_temporal_order(report):
    cfg = SimConfig(nx=32, ny=32, lx=TWO_PI, ly=TWO_PI, alpha=0.3, t_end=0.4,
                    ic="random_seeded", ic_seed=7, ic_kmax=3, **ANISO)
    params = ModelParams(alpha=0.3)
    start = initial_state(cfg)

    def integrate(n):
        s = start
        for _ in range(n):
            s = rk4_step(s, 0.4 / n, params)
        return np.concatenate([s.u.data.ravel(), s.F.data.ravel()])

    a, b, c = (integrate(n) for n in (5, 10, 20))
    ratio = float(np.linalg.norm(a - b) / np.linalg.norm(b - c))
    ok = 12 <= ratio <= 20
    report(10, ok, f"Richardson ratio {ratio:.2f} (in [12, 20])")
    assert ok


# -- 11: IO ----------------------------------------------------------------------------


def test_criterion_11_io(report, tmp_path):
    g = make_grid(32, 16, TWO_PI, np.pi)
    rng = np.random.default_rng(11)
    from aaee.grid_fields import OneFormField
    state = SimState(t=0.37, u=random_divfree(g, rng, 5), F=random_spd(g, rng, 4),
                     xi_flat=OneFormField(g, rng.standard_normal((2, 16, 32))),
                     loop=rng.uniform(0, 3, size=(40, 2)))
    write_snapshot(state, tmp_path / "s.aae")
    back = read_snapshot(tmp_path / "s.aae")
    exact = (back.t == state.t
             and all(getattr(back, f).data.tobytes() == getattr(state, f).data.tobytes()
                     for f in ("u", "F", "xi_flat"))
             and back.loop.tobytes() == state.loop.tobytes())

    cfg = SimConfig(nx=32, ny=32, lx=TWO_PI, ly=TWO_PI, alpha=0.3, t_end=0.2,
                    ic="random_seeded", ic_seed=3, loop="circle", loop_markers=64,
                    corrector=True, **ANISO)
    csvs = []
    for name in ("a", "b"):
        run_simulation(cfg, out_dir=tmp_path / name)
        csvs.append((tmp_path / name / "diagnostics.csv").read_bytes())
    identical = csvs[0] == csvs[1]
    ok = exact and identical
    report(11, ok, f"snapshot round-trip bit-exact: {exact}; repeated-run CSV identical: "
                   f"{identical} ({len(csvs[0])} bytes)")
    assert ok
