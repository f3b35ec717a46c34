"""BDF2 time stepping of the fully discrete monodomain scheme.

Each step performs, in order: extrapolation ``U* = 2 U_n - U_{n-1}``, the
per-DoF gating solve with ``U*``, right-hand-side assembly with nodal ionic
current interpolation, and a warm-started PCG solve.  The first step is
bootstrapped with one backward-Euler step (second history level); the system
matrix and the preconditioner are built once before stepping begins.
"""

import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import assembly as asm
from . import ionic as ion
from . import matrixfree as mfree
from . import mesh as msh
from . import multigrid as mg
from . import rtree as rt
from . import solver as slv
from . import space as spc


class TimeLoopError(RuntimeError):
    """Step failure (typically solver non-convergence), carries the step index."""


@dataclass
class StepRecord:
    index: int
    time: float
    pcg_iterations: int
    residual_start: float
    residual_end: float
    wall_time: float


@dataclass
class RunSummary:
    n_steps: int
    mean_iterations: float
    std_iterations: float
    min_iterations: int
    max_iterations: int

    @classmethod
    def from_records(cls, records):
        its = np.array([r.pcg_iterations for r in records])
        return cls(len(records), float(its.mean()), float(its.std()),
                   int(its.min()), int(its.max()))


class Simulation:
    """All run state: discretization, preconditioner, and BDF2 history."""

    def __init__(self, config):
        config.validate()
        self.config = config
        self.mesh = config.build_mesh()
        self.space = spc.space_from_mesh(self.mesh, config.degree)
        self.field = config.build_field(self.mesh)
        self.constants = config.build_constants()
        self.model = config.build_model()
        self.stimulus = config.build_stimulus()
        self.mass_apply = asm.MassApplier(self.mesh, self.space)
        self.matrix_free = config.operator == "matrix-free"

        A = asm.assemble_stiffness(self.mesh, self.space, self.field)
        M = asm.assemble_mass(self.mesh, self.space)
        A0 = asm.assemble_system(M, A, self.constants)
        self.fine_nnz = A0.nnz
        del A

        self.ctx = None
        if self.matrix_free:
            self.ctx = mfree.MatrixFreeContext(self.mesh, self.space, self.field,
                                               self.constants)
            self.apply_op = self.ctx.apply
            be_shift = self.constants.chi_m * self.constants.c_m / self.constants.dt
            self.apply_be = lambda v: self.ctx.apply(v, be_shift)
        else:
            self.apply_op = lambda v: A0 @ v
            half = 0.5 * self.constants.chi_m * self.constants.c_m / self.constants.dt
            self.apply_be = lambda v: A0 @ v - half * (M @ v)

        self.hierarchy = None
        self.mg = None
        precond = config.solver.precond
        if precond == "agglomg":
            opts = config.mg_options()
            if opts.levels == 1:
                self.mg = mg.build_single_level(A0, fine_apply=self.apply_op)
            else:
                self.hierarchy = rt.build_hierarchy(
                    self.mesh, order=config.rtree_order(), num_levels=opts.levels,
                    method=config.mg.rtree_method)
                self.mg = mg.build_mg(A0, self.hierarchy, config.degree, opts,
                                      fine_apply=self.apply_op,
                                      fine_diag=A0.diagonal())
            self.precond = self.mg.vcycle
        elif precond == "bjacobi":
            bj = slv.block_jacobi_build(A0, self.space.dofs_per_entity)
            self.precond = bj.apply
        else:
            self.precond = None

        # in matrix-free mode the assembled fine matrix is only needed to
        # build the hierarchy / block solvers and is dropped afterwards
        self.fine_matrix_released = False
        if self.matrix_free:
            A0 = None
            M = None
            self.fine_matrix_released = True
        self._A0 = A0
        self._M = M

        n = self.space.total_dofs
        if self.model is not None:
            self.U, self.W = self.model.rest_state(n)
        else:
            self.U, self.W = np.zeros(n), None
        self.U_prev = None
        self.W_prev = None
        self.step_index = 0
        self.records = []

    # -- state manipulation hooks -------------------------------------------

    def set_initial(self, U0, W0=None):
        """Override the rest initial condition (before the first step)."""
        if self.step_index != 0:
            raise TimeLoopError("set_initial must be called before stepping")
        self.U = np.array(U0, dtype=float)
        if W0 is not None:
            self.W = np.array(W0, dtype=float)

    def seed_history(self, U0, U1, W0=None, W1=None):
        """Provide both history levels directly (skips the BE bootstrap)."""
        self.U_prev = np.array(U0, dtype=float)
        self.U = np.array(U1, dtype=float)
        if W0 is not None:
            self.W_prev = np.array(W0, dtype=float)
            self.W = np.array(W1, dtype=float)
        elif self.model is not None:
            self.W_prev = self.W.copy()
        self.step_index = 1

    # -- diagnostics ---------------------------------------------------------

    def mass_total(self, u=None):
        """Total mass 1^T M u (conservation diagnostic)."""
        v = self.U if u is None else u
        return float(np.sum(self.mass_apply(v)))

    def probe(self, points):
        """Evaluate u_h at physical points (element-interior convention)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        elems = msh.locate_elements(self.mesh, pts)
        nb = self.space.dofs_per_entity
        out = np.empty(pts.shape[0])
        for i, (x, k) in enumerate(zip(pts, elems)):
            coeffs = self.U[k * nb:(k + 1) * nb]
            out[i] = float(self.space.evaluate_at(int(k), x[None, :], coeffs)[0])
        return out

    # -- stepping ------------------------------------------------------------

    def step(self):
        """Advance one time step; returns the StepRecord."""
        cfg = self.config
        c = self.constants
        t_start = _time.perf_counter()
        idx = self.step_index
        t_next = (idx + 1) * c.dt

        if idx == 0:
            # backward-Euler bootstrap for the second history level
            u_star = self.U
            W_next = (ion.gating_step_be(self.model, u_star, self.W, c.dt)
                      if self.model is not None else None)
            b = (c.chi_m * c.c_m / c.dt) * self.mass_apply(self.U)
            if self.model is not None:
                b -= c.chi_m * self.mass_apply(self.model.iion(u_star, W_next))
            b += asm.applied_current_vector(self.mesh, self.space, self.stimulus, t_next)
            if cfg.forcing is not None:
                b += cfg.forcing(t_next)
            apply_op = self.apply_be
        else:
            u_star = 2.0 * self.U - self.U_prev
            W_next = (ion.gating_step_bdf2(self.model, u_star, self.W, self.W_prev, c.dt)
                      if self.model is not None else None)
            b = asm.assemble_rhs(self.mesh, self.space, t_next, self.U, self.U_prev,
                                 W_next, self.model, self.stimulus, c,
                                 mass_apply=self.mass_apply, forcing=cfg.forcing)
            apply_op = self.apply_op

        sc = cfg.solver
        try:
            x, report = slv.pcg(apply_op, self.precond, b, x0=self.U,
                                abs_tol=sc.abs_tol, rel_tol=sc.rel_tol,
                                reduction_tol=sc.reduction_tol,
                                max_iter=sc.max_iter, flexible=sc.flexible)
        except slv.SolverError as exc:
            raise TimeLoopError(f"step {idx}: {exc}") from exc
        if not report.converged:
            raise TimeLoopError(
                f"step {idx}: PCG did not converge within {sc.max_iter} iterations "
                f"(residual {report.final_residual_norm:.3e})")

        self.U_prev = self.U
        self.U = x
        if self.model is not None:
            self.W_prev = self.W
            self.W = W_next
        self.step_index = idx + 1
        rec = StepRecord(idx, t_next, report.iterations,
                         report.residual_history[0], report.final_residual_norm,
                         _time.perf_counter() - t_start)
        self.records.append(rec)
        return rec

    def run_all(self, n_steps=None):
        total = self.config.time.n_steps if n_steps is None else n_steps
        while self.step_index < total:
            self.step()
        return self.records


def initialize(config):
    """Build a ready-to-step Simulation (matrices, preconditioner, rest state)."""
    return Simulation(config)


def run(config, n_steps=None):
    """Execute the configured run; returns (simulation, records, summary)."""
    sim = initialize(config)
    records = sim.run_all(n_steps)
    return sim, records, RunSummary.from_records(records)
