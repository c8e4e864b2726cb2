"""Spectrally filtered quasi-Helmholtz decompositions and EFIE preconditioners.

Import submodules directly (qhfilters.mesh, qhfilters.qhd, ...); this root
module stays import-light so the CLI can configure threading environment
variables before any numerical library loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "mesh",
    "shapes",
    "quadrature",
    "qhd",
    "filters",
    "efie",
    "precond",
    "analysis",
    "exports",
    "config",
    "cli",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
