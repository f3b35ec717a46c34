"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The two heavy experiment families (2D iteration-count reproduction and the 3D
level-independence study) run once in module-scoped fixtures and are shared
by the criteria that read them.  Run with ``pytest tests/test_acceptance.py -v -s``;
the full suite takes on the order of two hours single-node.
"""

import math

import numpy as np
import pytest

from polymg import assembly as asm
from polymg import config as cfgm
from polymg import ionic
from polymg import matrixfree as mf
from polymg import mesh as msh
from polymg import multigrid as mg
from polymg import rtree as rt
from polymg import solver as slv
from polymg import space as spc
from polymg import timeloop as tl

RESULTS = []


def report(num, name, ok, detail):
    line = f"ACCEPTANCE {num:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print("\n" + line)
    assert ok, line


# ---------------------------------------------------------------------------
# shared heavy runs
# ---------------------------------------------------------------------------

def fhn2d_config(p, precond="agglomg", steps=400):
    """The 2D reproduction setup: unit square, 128x128, FHN, dt=1e-4,
    box stimulus, absolute tolerance 1e-14, warm starts, L=3 multigrid."""
    cfg = cfgm.SimulationConfig()
    cfg.degree = p
    cfg.time.t_final = steps * 1e-4
    cfg.solver.abs_tol = 1e-14
    cfg.solver.max_iter = 300
    cfg.solver.precond = precond
    cfg.mg.levels = 3
    return cfg


@pytest.fixture(scope="module")
def runs_2d():
    out = {}
    for p in (1, 2, 3, 4):
        _, recs, summary = tl.run(fhn2d_config(p))
        out[("agglomg", p)] = summary
    _, recs, summary = tl.run(fhn2d_config(4, precond="bjacobi"))
    out[("bjacobi", 4)] = summary
    return out


def bo3d_config(p, levels, steps=200):
    """Idealized 3D box-ventricle substitute: 16^3 hexes over a 4 cm cube,
    Bueno-Orovio, rotating fiber field, three point stimuli for 3 ms."""
    cfg = cfgm.SimulationConfig()
    cfg.mesh.dim = 3
    cfg.mesh.lo = (0.0, 0.0, 0.0)
    cfg.mesh.hi = (0.04, 0.04, 0.04)
    cfg.mesh.subdivisions = (16, 16, 16)
    cfg.degree = p
    cfg.model.name = "bueno-orovio"
    cfg.model.chi_m = 1.0
    cfg.model.c_m = 1.0
    cfg.conductivity.kind = "orthotropic"
    cfg.stimulus.kind = "points"
    cfg.stimulus.amplitude = 300.0
    cfg.stimulus.t_end = 3e-3
    cfg.stimulus.radius = 0.005
    cfg.stimulus.centers = (0.01, 0.01, 0.008, 0.03, 0.012, 0.02,
                            0.02, 0.032, 0.03)
    cfg.time.t_final = steps * 1e-4
    cfg.solver.abs_tol = 1e-14
    cfg.solver.max_iter = 300
    cfg.mg.levels = levels
    return cfg


@pytest.fixture(scope="module")
def runs_3d():
    out = {}
    for p in (1, 2):
        for levels in (2, 3, 4):
            _, _, summary = tl.run(bo3d_config(p, levels))
            out[(p, levels)] = summary
    return out


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_criterion_1_2d_iteration_counts(runs_2d):
    means = {p: runs_2d[("agglomg", p)].mean_iterations for p in (1, 2, 3, 4)}
    ok = all(4.0 <= m <= 9.0 for m in means.values())
    detail = ", ".join(f"p={p}: {m:.2f}" for p, m in means.items()) + " (band [4, 9])"
    report(1, "2D mean PCG iterations, 400 steps", ok, detail)


def test_criterion_2_p_robustness_ordering(runs_2d):
    mg_mean = runs_2d[("agglomg", 4)].mean_iterations
    bj_mean = runs_2d[("bjacobi", 4)].mean_iterations
    ratio = bj_mean / mg_mean
    ok = ratio >= 1.5
    report(2, "block-Jacobi vs multigrid at p=4", ok,
           f"BJ {bj_mean:.2f} / MG {mg_mean:.2f} = {ratio:.3f} (need >= 1.5)")


def test_criterion_3_level_independence(runs_3d):
    details = []
    ok = True
    for p in (1, 2):
        means = [runs_3d[(p, levels)].mean_iterations for levels in (2, 3, 4)]
        spread = max(means) - min(means)
        ok &= spread <= 1.0
        details.append(f"p={p}: L2/3/4 = " +
                       "/".join(f"{m:.2f}" for m in means) +
                       f" (spread {spread:.2f})")
    report(3, "3D level independence", ok, "; ".join(details))


def test_criterion_4_matrix_free_equivalence():
    rng = np.random.default_rng(0)
    worst = 0.0
    for dim, sub in ((2, (4, 4)), (3, (3, 3, 3))):
        mesh = msh.generate_structured(dim, [0] * dim, [1] * dim, sub)
        fld = asm.ConductivityField.isotropic(dim, 0.12)
        const = asm.ModelConstants(1e5, 1e-2, 1e-4, 0.4)
        for p in (1, 2, 3):
            space = spc.space_from_mesh(mesh, p)
            A0 = asm.assemble_system(asm.assemble_mass(mesh, space),
                                     asm.assemble_stiffness(mesh, space, fld),
                                     const)
            ctx = mf.MatrixFreeContext(mesh, space, fld, const)
            for _ in range(10):
                v = rng.standard_normal(space.total_dofs)
                ref = A0 @ v
                err = np.linalg.norm(ctx.apply(v) - ref) / np.linalg.norm(ref)
                worst = max(worst, err)
    report(4, "matrix-free oracle equivalence", worst <= 1e-12,
           f"max rel err {worst:.2e} (need <= 1e-12)")


def test_criterion_5_galerkin_chain_structure():
    mesh = msh.generate_structured(2, [0, 0], [1, 1], (16, 16))
    fld = asm.ConductivityField.isotropic(2, 0.12)
    const = asm.ModelConstants(1e5, 1e-2, 1e-4, 0.4)
    space = spc.space_from_mesh(mesh, 1)
    A = asm.assemble_stiffness(mesh, space, fld)
    A0 = asm.assemble_system(asm.assemble_mass(mesh, space), A, const)
    hier = rt.build_hierarchy(mesh, num_levels=3)
    spaces = [space] + [spc.space_from_agglomerates(hier, k + 1, 1) for k in (0, 1)]
    p0 = np.empty(mesh.n_elements, dtype=np.int64)
    for a, mem in enumerate(hier.levels[0].members):
        p0[mem] = a
    parents = [p0, hier.levels[0].parent]

    ok = True
    details = []
    Al, Sl = A0.tocsr(), A.tocsr()
    for k in range(2):
        P = mg.compute_prolongation(spaces[k], spaces[k + 1], parents[k])
        Al = mg.galerkin_product(Al, P)
        Sl = mg.galerkin_product(Sl, P)
        sym = abs(Al - Al.T).max() / abs(Al).max()
        ok &= sym <= 1e-12
        ker = np.abs(Sl @ np.ones(Sl.shape[0])).max() / np.abs(Sl).max()
        ok &= ker <= 1e-10
        x, rep = slv.pcg(lambda v: Al @ v, None, np.ones(Al.shape[0]),
                         rel_tol=1e-10, abs_tol=0.0, max_iter=2000)
        ok &= rep.converged
        if Al.shape[0] <= 256:
            wmin = np.linalg.eigvalsh(Al.toarray())[0]
            ok &= wmin > 0.0
            details.append(f"A_{k + 1}: sym {sym:.1e}, kernel {ker:.1e}, "
                           f"lam_min {wmin:.2e}")
        else:
            details.append(f"A_{k + 1}: sym {sym:.1e}, kernel {ker:.1e}, PCG ok")
    report(5, "Galerkin chain structure (16x16, L=3)", ok, "; ".join(details))


def test_criterion_6_coarsening_ratios():
    m2 = msh.generate_structured(2, [0, 0], [1, 1], (128, 128))
    h2 = rt.build_hierarchy(m2, order=(2, 4), num_levels=4)
    m3 = msh.generate_structured(3, [0, 0, 0], [1, 1, 1], (16, 16, 16))
    h3 = rt.build_hierarchy(m3, order=(4, 8), num_levels=4)
    r2, r3 = h2.coarsening_ratios(), h3.coarsening_ratios()
    ok = all(3.5 <= r <= 4.5 for r in r2) and all(7.0 <= r <= 8.5 for r in r3)
    report(6, "coarsening ratios", ok,
           f"2D {['%.2f' % r for r in r2]} in [3.5,4.5]; "
           f"3D {['%.2f' % r for r in r3]} in [7.0,8.5]")


def test_criterion_7_operator_complexity():
    const = asm.ModelConstants(1e5, 1e-2, 1e-4, 0.4)
    details = []
    ok = True
    for dim, sub in ((2, (32, 32)), (3, (8, 8, 8))):
        mesh = msh.generate_structured(dim, [0] * dim, [1] * dim, sub)
        fld = asm.ConductivityField.isotropic(dim, 0.12)
        for p in (1, 2):
            space = spc.space_from_mesh(mesh, p)
            A0 = asm.assemble_system(asm.assemble_mass(mesh, space),
                                     asm.assemble_stiffness(mesh, space, fld),
                                     const)
            hier = rt.build_hierarchy(mesh, num_levels=3)
            H = mg.build_mg(A0, hier, p, mg.MGOptions(levels=3))
            c = mg.operator_complexity(H)
            ok &= 1.05 <= c <= 1.45
            details.append(f"{dim}D p={p}: {c:.3f}")
    report(7, "operator complexity in [1.05, 1.45]", ok, "; ".join(details))


def test_criterion_8_conservation():
    cfg = cfgm.SimulationConfig()
    cfg.mesh.subdivisions = (32, 32)
    cfg.degree = 2
    cfg.model.name = "none"
    cfg.stimulus.kind = "none"
    cfg.time.t_final = 100e-4
    cfg.solver.rel_tol = 1e-13
    cfg.solver.abs_tol = 0.0
    cfg.mg.levels = 3
    sim = tl.initialize(cfg)
    centers = sim.mesh.element_centers()
    u0 = np.repeat(np.exp(-30 * ((centers - 0.5) ** 2).sum(axis=1)),
                   sim.space.dofs_per_entity)
    sim.set_initial(u0)
    m0 = sim.mass_total()
    sim.run_all()
    drift = abs(sim.mass_total() - m0) / abs(m0)
    report(8, "diffusion-only mass conservation, 100 steps", drift <= 1e-10,
           f"relative drift {drift:.2e} (need <= 1e-10)")


def test_criterion_9_bdf2_temporal_order():
    from tests.test_timeloop import base_config, manufactured_error

    def cfg():
        c = base_config(sub=(8, 8), p=1, levels=2)
        c.model.name = "none"
        c.stimulus.kind = "none"
        c.solver.rel_tol = 1e-13
        c.solver.abs_tol = 0.0
        c.solver.reduction_tol = 0.0
        return c

    e1 = manufactured_error(cfg(), 1e-3, 0.02)
    e2 = manufactured_error(cfg(), 5e-4, 0.02)
    order = math.log2(e1 / e2)
    report(9, "BDF2 temporal order", order >= 1.9,
           f"observed order {order:.3f} between dt and dt/2 (need >= 1.9)")


def test_criterion_10_ionic_unit_properties():
    ok = True
    details = []

    # FHN fixed point at the origin
    fhn = ionic.make_model("fhn")
    z = np.zeros(1)
    rest_ok = (fhn.iion(z, np.zeros((1, 1)))[0] == 0.0
               and fhn.gating_rhs(z, np.zeros((1, 1)))[0, 0] == 0.0)
    ok &= rest_ok
    details.append(f"FHN origin fixed point: {rest_ok}")

    # BO rest: starts at -84 mV, stays within 1 mV without stimulus
    bo = ionic.make_model("bueno-orovio")
    u, w = bo.rest_state(1)
    start_mv = float(ionic.to_millivolts(u[0]))
    dt = 1e-4
    w_prev = w.copy()
    u_prev = u.copy()
    max_dev = 0.0
    for n in range(1, 101):
        u_star = u if n == 1 else 2 * u - u_prev
        if n == 1:
            w_new = ionic.gating_step_be(bo, u_star, w, dt)
        else:
            w_new = ionic.gating_step_bdf2(bo, u_star, w, w_prev, dt)
        # single-cell update (no diffusion): BDF2 in u with the ICI ordering
        rhs = -bo.iion(u_star, w_new)
        u_new = ((4 * u - u_prev) + 2 * dt * rhs) / 3.0 if n > 1 else u + dt * rhs
        u_prev, u = u, u_new
        w_prev, w = w, w_new
        max_dev = max(max_dev, abs(float(ionic.to_millivolts(u[0])) + 84.0))
    rest_drift_ok = (start_mv == pytest.approx(-84.0)) and max_dev < 1.0
    ok &= rest_drift_ok
    details.append(f"BO rest drift over 100 steps: {max_dev:.3f} mV (< 1)")

    # single-cell action potential morphology via the fine-step oracle
    dt_ref = 2e-6
    u = np.zeros(1)
    w = bo.rest_state(1)[1]
    peak_mv = -1e9
    for i in range(int(round(0.4 / dt_ref))):
        t = i * dt_ref
        iapp = 300.0 if t <= 3e-3 else 0.0
        du = -bo.iion(u, w) + iapp
        dw = bo.gating_rhs(u, w)
        u = u + dt_ref * du
        w = w + dt_ref * dw
        peak_mv = max(peak_mv, float(ionic.to_millivolts(u[0])))
    final_mv = float(ionic.to_millivolts(u[0]))
    morph_ok = peak_mv > 0.0 and final_mv < -70.0
    ok &= morph_ok
    details.append(f"AP peak {peak_mv:.1f} mV > 0, end {final_mv:.1f} mV < -70")

    report(10, "ionic model unit properties", ok, "; ".join(details))


def test_zz_summary():
    print("\n" + "=" * 72)
    for line in RESULTS:
        print(line)
    print("=" * 72)
