"""Command-line front end: run simulations, dump hierarchies, benchmark the
operator, and run the built-in invariant suite.

Subcommands
-----------
run        full simulation from a config file; writes per-step CSV, summary,
           probe series, optional field snapshots, and a manifest
hierarchy  build and dump an agglomeration hierarchy
bench-op   time matrix-free vs matrix-based operator application
verify     quick invariant checks; nonzero exit on failure

Exit codes: 0 success, 1 solver failure, 2 configuration error.
"""

import os
import sys

# honor the thread cap before numpy's BLAS is initialized
_threads = os.environ.get("POLYMG_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import time as _time

import numpy as np

CSV_HEADER = "step,time,iterations,res_start,res_end,wall_s"


def write_snapshot(u, space, path):
    """Plain-text field snapshot: one row per DoF, 17 significant digits.

    Header lines (starting with `#`) record the layout; data rows are
    ``x y [z] u u_mV``.  Reading the file back reproduces u bitwise.
    """
    from . import ionic

    u = np.asarray(u, dtype=float)
    mv = ionic.to_millivolts(u)
    nb = space.dofs_per_entity
    with open(path, "w") as fh:
        fh.write(f"# polymg snapshot dim={space.dim} degree={space.degree} "
                 f"entities={space.entity_count} dofs={space.total_dofs}\n")
        fh.write("# columns: " + " ".join(f"x{a}" for a in range(space.dim)) + " u u_mV\n")
        for k in range(space.entity_count):
            pts = space.support_points(k)
            for j in range(nb):
                coords = " ".join(f"{c:.17g}" for c in pts[j])
                i = k * nb + j
                fh.write(f"{coords} {u[i]:.17g} {mv[i]:.17g}\n")


def read_snapshot(path):
    """Read a snapshot written by :func:`write_snapshot`; returns (points, u, u_mV)."""
    pts, us, mvs = [], [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            vals = [float(t) for t in line.split()]
            pts.append(vals[:-2])
            us.append(vals[-2])
            mvs.append(vals[-1])
    return np.array(pts), np.array(us), np.array(mvs)


def _apply_overrides(cfg, args):
    if args.operator:
        cfg.operator = args.operator
    if args.precond:
        cfg.solver.precond = args.precond
    if args.levels:
        cfg.mg.levels = args.levels
    if args.degree:
        cfg.degree = args.degree
    if args.out:
        cfg.output.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _cmd_run(args):
    from . import config as cfgm
    from . import timeloop as tl

    cfg = cfgm.load_config(args.config) if args.config else cfgm.SimulationConfig()
    _apply_overrides(cfg, args)

    out = cfg.output.out_dir
    os.makedirs(out, exist_ok=True)
    sim = tl.initialize(cfg)
    probes = cfg.probe_points()
    written = []

    csv_path = os.path.join(out, "iterations.csv")
    probes_path = os.path.join(out, "probes.csv")
    n_steps = cfg.time.n_steps
    t0 = _time.perf_counter()
    with open(csv_path, "w") as csv_fh, open(probes_path, "w") as probe_fh:
        csv_fh.write(CSV_HEADER + "\n")
        probe_fh.write("step,time," + ",".join(
            f"u{i}" for i in range(probes.shape[0])) + "\n")
        while sim.step_index < n_steps:
            rec = sim.step()
            csv_fh.write(f"{rec.index},{rec.time:.17g},{rec.pcg_iterations},"
                         f"{rec.residual_start:.17g},{rec.residual_end:.17g},"
                         f"{rec.wall_time:.6f}\n")
            if probes.shape[0]:
                vals = sim.probe(probes)
                probe_fh.write(f"{rec.index},{rec.time:.17g}," +
                               ",".join(f"{v:.17g}" for v in vals) + "\n")
            if cfg.output.snapshot_every and (rec.index + 1) % cfg.output.snapshot_every == 0:
                snap = os.path.join(out, f"snapshot_{rec.index + 1:06d}.txt")
                write_snapshot(sim.U, sim.space, snap)
                written.append(snap)
    wall = _time.perf_counter() - t0
    written.extend([csv_path, probes_path])

    summary = tl.RunSummary.from_records(sim.records)
    summary_path = os.path.join(out, "summary.txt")
    with open(summary_path, "w") as fh:
        fh.write(f"n_steps = {summary.n_steps}\n")
        fh.write(f"mean_iterations = {summary.mean_iterations:.6g}\n")
        fh.write(f"std_iterations = {summary.std_iterations:.6g}\n")
        fh.write(f"min_iterations = {summary.min_iterations}\n")
        fh.write(f"max_iterations = {summary.max_iterations}\n")
        fh.write(f"wall_s = {wall:.3f}\n")
        if sim.mg is not None:
            from . import multigrid as mg

            fh.write(f"operator_complexity = {mg.operator_complexity(sim.mg):.6g}\n")
    written.append(summary_path)

    if args.dump_hierarchy and sim.hierarchy is not None:
        hpath = os.path.join(out, "hierarchy.txt")
        sim.hierarchy.export_text(hpath)
        written.append(hpath)

    manifest_path = os.path.join(out, "manifest.txt")
    with open(manifest_path, "w") as fh:
        fh.write("[versions]\n")
        fh.write(f"polymg = {_version()}\nnumpy = {np.__version__}\n")
        fh.write(f"seed = {cfg.seed}\n\n[files]\n")
        for path in written:
            fh.write(os.path.basename(path) + "\n")
        fh.write("\n[config]\n")
        fh.write(cfg.echo())

    print(f"run finished: {summary.n_steps} steps, mean PCG iterations "
          f"{summary.mean_iterations:.2f} (std {summary.std_iterations:.2f}, "
          f"min {summary.min_iterations}, max {summary.max_iterations})")
    print(f"outputs in {out}")
    return 0


def _parse_mesh_arg(text):
    return tuple(int(t) for t in text.lower().split("x"))


def _cmd_hierarchy(args):
    from . import mesh as msh
    from . import rtree as rt

    sub = _parse_mesh_arg(args.mesh)
    dim = len(sub)
    mesh = msh.generate_structured(dim, [0.0] * dim, [1.0] * dim, sub)
    order = (args.m, args.M) if args.m and args.M else None
    hier = rt.build_hierarchy(mesh, order=order, num_levels=args.levels,
                              method=args.method)
    out = args.out or "hierarchy.txt"
    hier.export_text(out)
    card = hier.cardinalities()
    ratios = hier.coarsening_ratios()
    print(f"levels: {card}")
    print("ratios: " + " ".join(f"{r:.3g}" for r in ratios))
    if hier.truncated:
        print(f"note: requested {hier.requested_levels} levels, tree supports "
              f"{len(hier.levels) + 1}")
    print(f"dump written to {out}")
    return 0


def _cmd_bench_op(args):
    from . import assembly as asm
    from . import matrixfree as mf
    from . import mesh as msh
    from . import space as spc

    sub = _parse_mesh_arg(args.mesh)
    dim = len(sub)
    mesh = msh.generate_structured(dim, [0.0] * dim, [1.0] * dim, sub)
    const = asm.ModelConstants(1e5, 1e-2, 1e-4, 1.0)
    fld = asm.ConductivityField.isotropic(dim, 0.12)
    print(f"mesh {args.mesh} ({mesh.n_elements} elements), "
          f"averaging over {args.reps} applications")
    print(f"{'p':>2} {'dofs':>9} {'matrix-based':>14} {'matrix-free':>13} {'speedup':>8}")
    for p in args.degrees:
        space = spc.space_from_mesh(mesh, p)
        A = asm.assemble_stiffness(mesh, space, fld)
        M = asm.assemble_mass(mesh, space)
        A0 = asm.assemble_system(M, A, const)
        ctx = mf.MatrixFreeContext(mesh, space, fld, const)
        v = np.random.default_rng(args.seed or 0).standard_normal(space.total_dofs)
        err = np.linalg.norm(ctx.apply(v) - A0 @ v) / np.linalg.norm(A0 @ v)
        assert err < 1e-12, f"operator mismatch {err:.2e}"

        def timeit(fn):
            fn(v)  # warm up
            t0 = _time.perf_counter()
            for _ in range(args.reps):
                fn(v)
            return (_time.perf_counter() - t0) / args.reps

        t_mb = timeit(lambda x: A0 @ x)
        t_mf = timeit(ctx.apply)
        print(f"{p:>2} {space.total_dofs:>9} {t_mb * 1e3:>11.3f} ms "
              f"{t_mf * 1e3:>10.3f} ms {t_mb / t_mf:>7.2f}x")
    return 0


def _cmd_verify(args):
    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except Exception as exc:  # noqa: BLE001 - report, do not crash
            checks.append((name, False, str(exc)))

    from . import assembly as asm
    from . import matrixfree as mf
    from . import mesh as msh
    from . import multigrid as mg
    from . import rtree as rt
    from . import solver as slv
    from . import space as spc

    rng = np.random.default_rng(0)

    def mesh_invariants():
        mesh = msh.generate_structured(2, [0, 0], [1, 1], (8, 8))
        vols = np.prod(mesh.element_hi - mesh.element_lo, axis=1)
        assert abs(vols.sum() - 1.0) < 1e-13
        counts = np.zeros(mesh.n_elements, dtype=int)
        for e_p, e_m, _, _ in mesh.interior_faces:
            counts[e_p] += 1
            counts[e_m] += 1
        for e, _ in mesh.boundary_faces:
            counts[e] += 1
        assert np.all(counts == 4)

    def hierarchy_invariants():
        mesh = msh.generate_structured(2, [0, 0], [1, 1], (16, 16))
        hier = rt.build_hierarchy(mesh, num_levels=3)
        for lvl in hier.levels:
            cat = np.concatenate(lvl.members)
            assert cat.size == mesh.n_elements
            assert np.array_equal(np.sort(cat), np.arange(mesh.n_elements))
        for r in hier.coarsening_ratios():
            assert 3.5 <= r <= 4.5

    def operator_equivalence():
        mesh = msh.generate_structured(2, [0, 0], [1, 1], (4, 4))
        const = asm.ModelConstants(1e5, 1e-2, 1e-4, 1.0)
        fld = asm.ConductivityField.isotropic(2, 0.12)
        for p in (1, 2):
            space = spc.space_from_mesh(mesh, p)
            A0 = asm.assemble_system(asm.assemble_mass(mesh, space),
                                     asm.assemble_stiffness(mesh, space, fld), const)
            ctx = mf.MatrixFreeContext(mesh, space, fld, const)
            v = rng.standard_normal(space.total_dofs)
            err = np.linalg.norm(ctx.apply(v) - A0 @ v) / np.linalg.norm(A0 @ v)
            assert err < 1e-12

    def galerkin_chain():
        mesh = msh.generate_structured(2, [0, 0], [1, 1], (16, 16))
        fld = asm.ConductivityField.isotropic(2, 0.12)
        space = spc.space_from_mesh(mesh, 1)
        A = asm.assemble_stiffness(mesh, space, fld)
        hier = rt.build_hierarchy(mesh, num_levels=3)
        spaces = [space] + [spc.space_from_agglomerates(hier, k + 1, 1) for k in (0, 1)]
        p0 = np.empty(mesh.n_elements, dtype=np.int64)
        for a, mem in enumerate(hier.levels[0].members):
            p0[mem] = a
        Al = A.tocsr()
        for k, par in enumerate([p0, hier.levels[0].parent]):
            P = mg.compute_prolongation(spaces[k], spaces[k + 1], par)
            Al = mg.galerkin_product(Al, P)
            assert abs(Al - Al.T).max() <= 1e-12 * abs(Al).max()
            assert np.abs(Al @ np.ones(Al.shape[0])).max() <= 1e-10 * np.abs(Al).max()

    def conservation():
        from . import config as cfgm
        from . import timeloop as tl

        cfg = cfgm.SimulationConfig()
        cfg.mesh.subdivisions = (8, 8)
        cfg.degree = 1
        cfg.model.name = "none"
        cfg.stimulus.kind = "none"
        cfg.time.t_final = 20e-4
        cfg.solver.rel_tol = 1e-13
        cfg.solver.abs_tol = 0.0
        sim = tl.initialize(cfg)
        centers = sim.mesh.element_centers()
        u0 = np.repeat(np.exp(-20 * ((centers - 0.5) ** 2).sum(axis=1)),
                       sim.space.dofs_per_entity)
        sim.set_initial(u0)
        m0 = sim.mass_total()
        sim.run_all()
        assert abs(sim.mass_total() - m0) <= 1e-10 * abs(m0)

    def pcg_basics():
        n = 32
        Q = rng.standard_normal((n, n))
        A = Q @ Q.T + n * np.eye(n)
        b = rng.standard_normal(n)
        x, rep = slv.pcg(lambda v: A @ v, None, b, rel_tol=1e-12, abs_tol=0.0,
                         max_iter=n + 5)
        assert rep.converged and np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)

    check("mesh invariants", mesh_invariants)
    check("hierarchy partition/ratios", hierarchy_invariants)
    check("matrix-free equivalence", operator_equivalence)
    check("galerkin chain symmetry/kernel", galerkin_chain)
    check("diffusion conservation", conservation)
    check("pcg on SPD system", pcg_basics)

    failed = 0
    for name, ok, msg in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({msg})" if msg else ""))
        failed += not ok
    return 1 if failed else 0


def _version():
    from . import __version__

    return __version__


def build_parser():
    parser = argparse.ArgumentParser(
        prog="polymg",
        description="Agglomerated multigrid DG solver for the cardiac monodomain model")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a full simulation")
    run.add_argument("--config", help="plain-text config file (section.key = value)")
    run.add_argument("--operator", choices=["matrix-free", "matrix-based"])
    run.add_argument("--precond", choices=["agglomg", "bjacobi", "none"])
    run.add_argument("--levels", type=int)
    run.add_argument("--degree", type=int)
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.add_argument("--dump-hierarchy", action="store_true",
                     help="also export the agglomeration hierarchy")

    hier = sub.add_parser("hierarchy", help="build and dump an agglomeration hierarchy")
    hier.add_argument("--mesh", required=True, help="subdivisions, e.g. 8x8 or 16x16x16")
    hier.add_argument("--levels", type=int, default=2)
    hier.add_argument("--m", type=int, default=0)
    hier.add_argument("--M", type=int, default=0)
    hier.add_argument("--method", choices=["pack", "insert"], default="pack")
    hier.add_argument("--out")

    bench = sub.add_parser("bench-op", help="time matrix-free vs matrix-based apply")
    bench.add_argument("--mesh", default="16x16x16")
    bench.add_argument("--degrees", type=int, nargs="+", default=[1, 2, 3])
    bench.add_argument("--reps", type=int, default=20)
    bench.add_argument("--seed", type=int, default=0)

    sub.add_parser("verify", help="run the built-in invariant suite")
    return parser


def main(argv=None):
    from . import config as cfgm
    from . import timeloop as tl

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "hierarchy":
            return _cmd_hierarchy(args)
        if args.command == "bench-op":
            return _cmd_bench_op(args)
        if args.command == "verify":
            return _cmd_verify(args)
        parser.error(f"unknown command {args.command!r}")
    except cfgm.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except tl.TimeLoopError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
