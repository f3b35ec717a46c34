"""Simulation configuration: dataclasses plus a flat `section.key = value`
plain-text format.

Every key has a compiled-in default; a config file only overrides.  The full
effective configuration is echoed into the run manifest for reproducibility.
"""

from dataclasses import dataclass, field, fields, asdict

import numpy as np

from . import assembly as asm
from . import ionic
from . import mesh as msh
from .multigrid import MGOptions


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class MeshConfig:
    dim: int = 2
    lo: tuple = (0.0, 0.0)
    hi: tuple = (1.0, 1.0)
    subdivisions: tuple = (128, 128)
    file: str = ""              # read a plain-text mesh instead of generating


@dataclass
class ModelConfig:
    name: str = "fhn"           # fhn | bueno-orovio | none
    chi_m: float = 1e5
    c_m: float = 1e-2
    param_file: str = ""        # optional `name = value` overrides


@dataclass
class ConductivityConfig:
    kind: str = "isotropic"     # isotropic | orthotropic
    sigma: float = 1.2e-1
    sigma_l: float = 1e-4
    sigma_t: float = 0.5e-4
    sigma_n: float = 0.1e-4
    fiber_twist: float = 1.0471975511965976   # pi/3 across the domain
    fiber_axis: int = 2


@dataclass
class StimulusConfig:
    kind: str = "box"           # box | points | none
    amplitude: float = 2e6
    lo: tuple = (0.4, 0.4)
    hi: tuple = (0.6, 0.6)
    t_start: float = 0.0
    t_end: float = 1e-3
    centers: tuple = ()
    radius: float = 0.0


@dataclass
class TimeConfig:
    dt: float = 1e-4
    t_final: float = 0.4

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))


@dataclass
class SolverConfig:
    abs_tol: float = 1e-14
    rel_tol: float = 0.0
    reduction_tol: float = 0.0
    max_iter: int = 200
    precond: str = "agglomg"    # agglomg | bjacobi | none
    flexible: bool = False


@dataclass
class MGConfig:
    levels: int = 3
    smoother_degree: int = 3
    smoother_sweeps: int = 3
    coarse_solver: str = "auto"         # auto | direct | pcg
    coarse_direct_max: int = 20000
    cheby_range_divisor: float = 20.0
    lanczos_iters: int = 12
    rtree_m: int = 0            # 0 = dimension default (2 in 2D, 4 in 3D)
    rtree_M: int = 0            # 0 = dimension default (4 in 2D, 8 in 3D)
    rtree_method: str = "pack"  # pack | insert


@dataclass
class OutputConfig:
    out_dir: str = "out"
    snapshot_every: int = 0     # 0 disables full-field snapshots
    probes: tuple = ()          # flattened point coordinates


@dataclass
class SimulationConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    conductivity: ConductivityConfig = field(default_factory=ConductivityConfig)
    stimulus: StimulusConfig = field(default_factory=StimulusConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mg: MGConfig = field(default_factory=MGConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    degree: int = 2
    operator: str = "matrix-free"       # matrix-free | matrix-based
    seed: int = 0
    forcing: object = None              # test hook, not file-configurable

    # -- validation and builders -------------------------------------------

    def validate(self):
        if self.degree < 1:
            raise ConfigError("degree must be >= 1")
        if self.operator not in ("matrix-free", "matrix-based"):
            raise ConfigError(f"unknown operator mode {self.operator!r}")
        if self.solver.precond not in ("agglomg", "bjacobi", "none"):
            raise ConfigError(f"unknown preconditioner {self.solver.precond!r}")
        if self.time.dt <= 0 or self.time.t_final < self.time.dt:
            raise ConfigError("need 0 < dt <= t_final")
        if self.stimulus.kind not in ("box", "points", "none"):
            raise ConfigError(f"unknown stimulus kind {self.stimulus.kind!r}")
        if self.model.name not in ("fhn", "bueno-orovio", "none"):
            raise ConfigError(f"unknown model {self.model.name!r}")
        if self.mg.levels < 1:
            raise ConfigError("mg.levels must be >= 1")
        probes = np.asarray(self.output.probes, dtype=float)
        if probes.size % max(self.mesh.dim, 1):
            raise ConfigError("output.probes length must be a multiple of dim")
        return self

    def build_mesh(self):
        mc = self.mesh
        if mc.file:
            return msh.read_mesh(mc.file)
        return msh.generate_structured(mc.dim, mc.lo[:mc.dim], mc.hi[:mc.dim],
                                       mc.subdivisions[:mc.dim])

    def build_model(self):
        if self.model.name == "none":
            return None
        overrides = ionic.read_params(self.model.param_file) if self.model.param_file else None
        return ionic.make_model(self.model.name, overrides)

    def build_field(self, mesh):
        cc = self.conductivity
        if cc.kind == "isotropic":
            return asm.ConductivityField.isotropic(mesh.dim, cc.sigma)
        if cc.kind != "orthotropic":
            raise ConfigError(f"unknown conductivity kind {cc.kind!r}")
        sigmas = (cc.sigma_l, cc.sigma_t, cc.sigma_n)[:mesh.dim]
        if mesh.dim == 3:
            lo = mesh.vertices.min(axis=0)
            hi = mesh.vertices.max(axis=0)
            frame = asm.rotating_fiber_frame(lo, hi, cc.fiber_twist, cc.fiber_axis)
        else:
            frame = asm.axis_aligned_frame(2)
        return asm.ConductivityField.orthotropic(mesh.dim, sigmas, frame)

    def build_stimulus(self):
        sc = self.stimulus
        if sc.kind == "none":
            return None
        if sc.kind == "box":
            dim = self.mesh.dim
            return asm.BoxStimulus(sc.amplitude, np.asarray(sc.lo[:dim]),
                                   np.asarray(sc.hi[:dim]), sc.t_start, sc.t_end)
        centers = np.asarray(sc.centers, dtype=float).reshape(-1, self.mesh.dim)
        if centers.size == 0:
            raise ConfigError("points stimulus needs centers")
        return asm.PointsStimulus(sc.amplitude, centers, sc.radius, sc.t_start, sc.t_end)

    def build_constants(self):
        return asm.ModelConstants(self.model.chi_m, self.model.c_m,
                                  self.time.dt, self.time.t_final)

    def mg_options(self):
        g = self.mg
        return MGOptions(levels=g.levels, smoother_degree=g.smoother_degree,
                         smoother_sweeps=g.smoother_sweeps,
                         coarse_solver=g.coarse_solver,
                         coarse_direct_max=g.coarse_direct_max,
                         cheby_range_divisor=g.cheby_range_divisor,
                         lanczos_iters=g.lanczos_iters, seed=self.seed)

    def rtree_order(self):
        if self.mg.rtree_m and self.mg.rtree_M:
            return (self.mg.rtree_m, self.mg.rtree_M)
        return None

    def probe_points(self):
        pts = np.asarray(self.output.probes, dtype=float)
        return pts.reshape(-1, self.mesh.dim) if pts.size else np.zeros((0, self.mesh.dim))

    def echo(self):
        """Full flat `section.key = value` text of the effective config."""
        lines = []
        for name, sub in self._sections():
            for f in fields(sub):
                lines.append(f"{name}.{f.name} = {_fmt(getattr(sub, f.name))}")
        for key in ("degree", "operator", "seed"):
            lines.append(f"{key} = {_fmt(getattr(self, key))}")
        return "\n".join(lines) + "\n"

    def _sections(self):
        return [("mesh", self.mesh), ("model", self.model),
                ("conductivity", self.conductivity), ("stimulus", self.stimulus),
                ("time", self.time), ("solver", self.solver), ("mg", self.mg),
                ("output", self.output)]


def _fmt(value):
    if isinstance(value, (tuple, list)):
        return " ".join(repr(v) for v in value)
    if isinstance(value, str):
        return value
    return repr(value)


def _parse_value(current, text):
    if isinstance(current, bool):
        low = text.strip().lower()
        if low in ("1", "true", "on", "yes"):
            return True
        if low in ("0", "false", "off", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, (tuple, list)):
        return tuple(float(tok) for tok in text.replace(",", " ").split())
    return text.strip()


def parse_config(text, base=None):
    """Parse flat `section.key = value` lines into a SimulationConfig."""
    cfg = base or SimulationConfig()
    sections = dict(cfg._sections())
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if "." in key:
            sec, attr = key.split(".", 1)
            if sec not in sections:
                raise ConfigError(f"line {lineno}: unknown section {sec!r}")
            target = sections[sec]
        else:
            sec, attr, target = None, key, cfg
        if not hasattr(target, attr):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        current = getattr(target, attr)
        try:
            setattr(target, attr, _parse_value(current, val))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    # integer-valued tuples stay integer (mesh subdivisions)
    cfg.mesh.subdivisions = tuple(int(s) for s in cfg.mesh.subdivisions)
    return cfg.validate()


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base=base)
