"""Run configuration: TOML parsing, validation, template printing.

A config is a flat TOML table whose keys mirror RunConfig's fields.  Mesh
entries are either builtin specs ("icosphere:2", "torus:16x8",
"deformed-sphere:2") or paths to OBJ / MSH v2 files.  Unknown keys are
rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # stdlib from 3.11 on
    import tomli as tomllib

from .errors import ConfigError

FORMULATIONS = (
    "plain",
    "loop-star",
    "filtered-ls",
    "qh-projectors",
    "filtered-qh",
)

_BACKENDS = ("svd", "power", "butterworth", "chebyshev")
_WEIGHT_METHODS = ("estimate", "power", "exact")

# free-space constants repeated here so the config module stays light
_VACUUM_EPSILON = 8.8541878128e-12
_VACUUM_MU = 1.25663706212e-6


@dataclass(frozen=True)
class RunConfig:
    meshes: tuple = ()
    frequencies: tuple = ()
    formulations: tuple = ("plain",)
    filter_backend: str = "svd"
    butterworth_order: int = 100
    poly_count: int = 200
    alpha: int = 2
    weight_method: str = "estimate"
    solver_tol: float = 1e-8
    solver_max_iter: int = 0  # 0 means the system dimension
    stability_zeroing: bool = True
    solve_during_sweep: bool = False
    wave_direction: tuple = (0.0, 0.0, 1.0)
    wave_polarization: tuple = (1.0, 0.0, 0.0)
    wave_amplitude: float = 1.0
    epsilon: float = _VACUUM_EPSILON
    mu: float = _VACUUM_MU
    output_dir: str = "."


def validate(config: RunConfig) -> RunConfig:
    """Raise ConfigError on anything a sweep or solve would choke on."""
    if not config.meshes:
        raise ConfigError("config lists no meshes")
    if not all(isinstance(m, str) and m.strip() for m in config.meshes):
        raise ConfigError("mesh entries must be non-empty strings")
    if not config.frequencies:
        raise ConfigError("config lists no frequencies")
    if any(f <= 0.0 for f in config.frequencies):
        raise ConfigError("frequencies must be positive")
    if not config.formulations:
        raise ConfigError("config lists no formulations")
    for form in config.formulations:
        if form not in FORMULATIONS:
            raise ConfigError(
                f"unknown formulation {form!r}; expected one of {FORMULATIONS}"
            )
    if config.filter_backend not in _BACKENDS:
        raise ConfigError(
            f"unknown filter backend {config.filter_backend!r}; "
            f"expected one of {_BACKENDS}"
        )
    if config.weight_method not in _WEIGHT_METHODS:
        raise ConfigError(
            f"unknown weight method {config.weight_method!r}; "
            f"expected one of {_WEIGHT_METHODS}"
        )
    if config.alpha < 2:
        raise ConfigError("alpha must be >= 2")
    if config.butterworth_order < 2 or config.butterworth_order % 2:
        raise ConfigError("butterworth_order must be a positive even integer")
    if config.poly_count < 1:
        raise ConfigError("poly_count must be positive")
    if config.solver_tol <= 0.0:
        raise ConfigError("solver_tol must be positive")
    if config.solver_max_iter < 0:
        raise ConfigError("solver_max_iter must be >= 0")
    if len(config.wave_direction) != 3 or len(config.wave_polarization) != 3:
        raise ConfigError("wave_direction and wave_polarization need 3 components")
    if config.wave_amplitude <= 0.0:
        raise ConfigError("wave_amplitude must be positive")
    if config.epsilon <= 0.0 or config.mu <= 0.0:
        raise ConfigError("epsilon and mu must be positive")
    return config


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    if name in ("meshes", "formulations"):
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list of strings")
        return tuple(str(v) for v in value)
    if name == "frequencies":
        if not isinstance(value, list):
            raise ConfigError("frequencies must be a list of numbers")
        try:
            return tuple(float(v) for v in value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad frequency entry: {exc}") from None
    if name in ("wave_direction", "wave_polarization"):
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list of 3 numbers")
        return tuple(float(v) for v in value)
    target = type(getattr(RunConfig(), name))
    if target is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target is bool and not isinstance(value, bool):
        raise ConfigError(f"{name} must be true or false")
    if target is int and isinstance(value, bool):
        raise ConfigError(f"{name} must be an integer")
    if not isinstance(value, target):
        raise ConfigError(
            f"{name} must be {target.__name__}, got {type(value).__name__}"
        )
    return value


def from_toml(path: str) -> RunConfig:
    """Read and validate a config file."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from None
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {name: _coerce(name, value) for name, value in data.items()}
    return validate(RunConfig(**kwargs))


TEMPLATE = '''\
# qhfilters run configuration

# Builtin specs ("tetrahedron", "icosphere:2", "torus:16x8",
# "deformed-sphere:2", "almond:2") or paths to .obj / .msh files.
meshes = ["icosphere:1", "icosphere:2"]

# Hz
frequencies = [1e4, 1e6]

# Any of: plain, loop-star, filtered-ls, qh-projectors, filtered-qh
formulations = ["plain", "filtered-ls", "filtered-qh"]

# Spectral filter backend for the filtered formulations:
# svd, power, butterworth, chebyshev
filter_backend = "svd"
butterworth_order = 100
poly_count = 200

# Dyadic sampling base and the eigenvalue source for level weights
# (estimate, power, exact)
alpha = 2
weight_method = "estimate"

# Krylov solver; max_iter 0 means the system dimension
solver_tol = 1e-8
solver_max_iter = 0

# Route the scalar-potential block through the star channel only
stability_zeroing = true

# Also solve during sweeps and record iteration counts
solve_during_sweep = false

# Incident plane wave and background medium
wave_direction = [0.0, 0.0, 1.0]
wave_polarization = [1.0, 0.0, 0.0]
wave_amplitude = 1.0
epsilon = 8.8541878128e-12
mu = 1.25663706212e-6

output_dir = "."
'''
