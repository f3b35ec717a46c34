"""Agglomerated multigrid preconditioning for DG monodomain solvers.

Submodules are imported on demand so that the command-line entry point can
configure threading environment variables before numpy is loaded.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "mesh",
    "rtree",
    "space",
    "assembly",
    "matrixfree",
    "ionic",
    "multigrid",
    "solver",
    "timeloop",
    "config",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f"{__name__}.{name}")
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
