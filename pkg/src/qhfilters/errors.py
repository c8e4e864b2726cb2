"""Error types shared across modules.

MeshError lives in qhfilters.mesh next to the loaders.  The CLI maps each
class to a distinct exit code.
"""


class ConfigError(Exception):
    """Invalid configuration or command-line input."""


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its tolerance/iteration budget."""
