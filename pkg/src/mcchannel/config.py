"""Experiment configuration: a single YAML file, validated strictly.

Unknown keys anywhere in the tree are errors, and a loaded config
serializes back to an equivalent document (lossless round-trip), so a run
is fully described by its config file plus the master seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import yaml

from .errors import ConfigurationError

__all__ = [
    "GeometryGrid",
    "SimulationSettings",
    "PsoSettings",
    "Table4Settings",
    "ImpulseSettings",
    "EstimationSettings",
    "ExperimentConfig",
    "load_config",
    "dump_config",
    "config_hash",
    "DEFAULT_CONFIG",
]


def _expect_keys(section: str, raw: dict, allowed):
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in '{section}': {sorted(unknown)}")


def _floats(section, name, v, n=None):
    if not isinstance(v, (list, tuple)) or (n is not None and len(v) != n):
        raise ConfigurationError(f"'{section}.{name}' must be a list" + (f" of {n} numbers" if n else ""))
    try:
        out = tuple(float(x) for x in v)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"'{section}.{name}' must contain numbers") from e
    return out


def _num(section, name, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigurationError(f"'{section}.{name}' must be a number")
    return float(v)


@dataclass(frozen=True)
class GeometryGrid:
    r: float = 5.0
    n_tx: int = 3000
    d_values: tuple = (2.0, 4.0, 6.0, 8.0, 10.0)
    R_values: tuple = (5.0, 7.5, 10.0)
    D: float = 100.0

    def __post_init__(self):
        if self.r <= 0 or self.D <= 0 or self.n_tx < 1:
            raise ConfigurationError("geometry: r, D must be positive and n_tx >= 1")
        if not self.d_values or not self.R_values:
            raise ConfigurationError("geometry: d_values and R_values must be non-empty")
        if any(v <= 0 for v in self.d_values) or any(v <= 0 for v in self.R_values):
            raise ConfigurationError("geometry: grid values must be positive")


@dataclass(frozen=True)
class SimulationSettings:
    dt: float = 5e-5
    t_end: float = 1.0
    release_mode: str = "axis_point"
    reflection_mode: str = "reject_step"
    workers: int = 1
    replicates: int = 4

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0 or self.t_end < 100 * self.dt:
            raise ConfigurationError("simulation: need dt > 0 and t_end >= 100*dt")
        if self.workers < 1 or self.replicates < 1:
            raise ConfigurationError("simulation: workers and replicates must be >= 1")
        if self.release_mode not in ("axis_point", "uniform_surface"):
            raise ConfigurationError(f"simulation: unknown release_mode {self.release_mode!r}")
        if self.reflection_mode not in ("reject_step", "radial_mirror"):
            raise ConfigurationError(f"simulation: unknown reflection_mode {self.reflection_mode!r}")


@dataclass(frozen=True)
class PsoSettings:
    cognitive: float = 0.5
    social: float = 0.3
    inertia: float = 0.9
    iterations: int = 200
    swarm_size: int = 300
    beta_bounds: tuple = (0.05, math.pi)
    b1_bounds: tuple = (0.1, 10.0)
    b2_bounds: tuple = (0.1, 1.5)
    b3_bounds: tuple = (0.1, 1.5)
    starts: int = 3
    guided_beta_low: float = 2.9
    fit_grid_points: int = 256

    def __post_init__(self):
        for nm in ("beta_bounds", "b1_bounds", "b2_bounds", "b3_bounds"):
            lo, hi = getattr(self, nm)
            if not lo < hi:
                raise ConfigurationError(f"pso: {nm} must be a non-degenerate interval")
        if self.starts < 1 or self.swarm_size < 2 or self.iterations < 1:
            raise ConfigurationError("pso: starts >= 1, swarm_size >= 2, iterations >= 1")
        if not self.beta_bounds[0] <= self.guided_beta_low < self.beta_bounds[1]:
            raise ConfigurationError("pso: guided_beta_low must lie inside beta_bounds")
        if self.fit_grid_points < 8:
            raise ConfigurationError("pso: fit_grid_points must be >= 8")

    def bounds(self):
        return (self.beta_bounds, self.b1_bounds, self.b2_bounds, self.b3_bounds)


@dataclass(frozen=True)
class Table4Settings:
    D_values: tuple = (5.0, 7.5, 10.0)
    R: float = 5.0
    grid_points: int = 50

    def __post_init__(self):
        if not self.D_values or any(v <= 0 for v in self.D_values) or self.R <= 0:
            raise ConfigurationError("table4: D_values and R must be positive")
        if self.grid_points < 16:
            raise ConfigurationError("table4: grid_points must be >= 16")


@dataclass(frozen=True)
class ImpulseSettings:
    d: float = 2.0
    R: float = 5.0
    bins: int = 200

    def __post_init__(self):
        if self.d <= 0 or self.R <= 0 or self.bins < 4:
            raise ConfigurationError("impulse: d, R must be positive and bins >= 4")


@dataclass(frozen=True)
class EstimationSettings:
    t1: float = 0.02
    t_end: float = 1.0
    M_values: tuple = (5, 10, 15, 20, 30)
    trials: int = 1000
    d_true: float = 6.0
    D_true: float = 100.0
    R: float = 5.0
    d_range: tuple = (1.0, 12.0)
    D_range: tuple = (20.0, 300.0)
    # correction parameters for the estimation model: grand means of the
    # fitted values over the default geometry grid (the fit drives every
    # cell's beta to pi)
    beta: float = math.pi
    b1: float = 1.123
    b2: float = 0.592
    b3: float = 0.620
    beta_sensitivity: tuple = (-0.1, -0.05, 0.05, 0.1)

    def __post_init__(self):
        if not 0 < self.t1 < self.t_end:
            raise ConfigurationError("estimation: need 0 < t1 < t_end")
        if not self.M_values or any(int(m) != m or m < 2 for m in self.M_values):
            raise ConfigurationError("estimation: M_values must be integers >= 2")
        if self.trials < 1:
            raise ConfigurationError("estimation: trials must be >= 1")
        if not self.d_range[0] < self.d_true < self.d_range[1]:
            raise ConfigurationError("estimation: d_range must bracket d_true")
        if not self.D_range[0] < self.D_true < self.D_range[1]:
            raise ConfigurationError("estimation: D_range must bracket D_true")
        if not 0 < self.beta <= math.pi or min(self.b1, self.b2, self.b3) <= 0:
            raise ConfigurationError("estimation: correction parameters out of range")


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    output_dir: str = "results"
    consistent_prefactor: bool = True
    geometry: GeometryGrid = field(default_factory=GeometryGrid)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    pso: PsoSettings = field(default_factory=PsoSettings)
    table4: Table4Settings = field(default_factory=Table4Settings)
    impulse: ImpulseSettings = field(default_factory=ImpulseSettings)
    estimation: EstimationSettings = field(default_factory=EstimationSettings)


_SECTIONS = {
    "geometry": GeometryGrid,
    "simulation": SimulationSettings,
    "pso": PsoSettings,
    "table4": Table4Settings,
    "impulse": ImpulseSettings,
    "estimation": EstimationSettings,
}

# per-field parsers where plain float/int coercion is not enough
_TUPLE_FIELDS = {
    ("geometry", "d_values"): None,
    ("geometry", "R_values"): None,
    ("table4", "D_values"): None,
    ("pso", "beta_bounds"): 2,
    ("pso", "b1_bounds"): 2,
    ("pso", "b2_bounds"): 2,
    ("pso", "b3_bounds"): 2,
    ("estimation", "d_range"): 2,
    ("estimation", "D_range"): 2,
    ("estimation", "beta_sensitivity"): None,
}
_INT_FIELDS = {
    ("geometry", "n_tx"),
    ("simulation", "workers"),
    ("simulation", "replicates"),
    ("pso", "iterations"),
    ("pso", "swarm_size"),
    ("pso", "starts"),
    ("pso", "fit_grid_points"),
    ("table4", "grid_points"),
    ("impulse", "bins"),
    ("estimation", "trials"),
}
_STR_FIELDS = {("simulation", "release_mode"), ("simulation", "reflection_mode")}


def _parse_section(name: str, cls, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"'{name}' must be a mapping")
    field_names = [f.name for f in fields(cls)]
    _expect_keys(name, raw, field_names)
    kwargs = {}
    for key, val in raw.items():
        spot = (name, key)
        if spot in _TUPLE_FIELDS:
            kwargs[key] = _floats(name, key, val, _TUPLE_FIELDS[spot])
        elif spot == ("estimation", "M_values"):
            vals = _floats(name, key, val)
            kwargs[key] = tuple(int(v) for v in vals)
        elif spot in _INT_FIELDS:
            v = _num(name, key, val)
            if int(v) != v:
                raise ConfigurationError(f"'{name}.{key}' must be an integer")
            kwargs[key] = int(v)
        elif spot in _STR_FIELDS:
            if not isinstance(val, str):
                raise ConfigurationError(f"'{name}.{key}' must be a string")
            kwargs[key] = val
        else:
            kwargs[key] = _num(name, key, val)
    return cls(**kwargs)


def parse_config(raw: dict) -> ExperimentConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a mapping")
    allowed = ["master_seed", "output_dir", "consistent_prefactor"] + list(_SECTIONS)
    _expect_keys("config", raw, allowed)
    kwargs = {}
    if "master_seed" in raw:
        v = _num("config", "master_seed", raw["master_seed"])
        if int(v) != v:
            raise ConfigurationError("'master_seed' must be an integer")
        kwargs["master_seed"] = int(v)
    if "output_dir" in raw:
        if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
            raise ConfigurationError("'output_dir' must be a non-empty string")
        kwargs["output_dir"] = raw["output_dir"]
    if "consistent_prefactor" in raw:
        if not isinstance(raw["consistent_prefactor"], bool):
            raise ConfigurationError("'consistent_prefactor' must be a boolean")
        kwargs["consistent_prefactor"] = raw["consistent_prefactor"]
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _parse_section(name, cls, raw[name])
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigurationError(f"cannot read config file: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"malformed config file: {e}") from e
    return parse_config(raw)


def config_to_dict(config: ExperimentConfig) -> dict:
    out = asdict(config)
    for key, val in list(out.items()):
        if isinstance(val, dict):
            out[key] = {k: list(v) if isinstance(v, tuple) else v for k, v in val.items()}
    return out


def dump_config(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=True)


def config_hash(config: ExperimentConfig) -> str:
    """Hash of the experiment-defining parameters.

    output_dir is excluded: it says where artifacts land, not what was
    computed, and the same experiment rerun into a new directory must
    produce identical manifests.
    """
    payload = config_to_dict(config)
    payload.pop("output_dir", None)
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


DEFAULT_CONFIG = ExperimentConfig()
