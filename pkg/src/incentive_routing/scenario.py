"""Scenario files: flat, versioned YAML mappings describing one run.

Relative file paths are resolved against the scenario file's directory.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .network import PER_PATH, PER_TURN, ContractError

SCENARIO_VERSION = 1

BUILTIN_NETWORKS = ("braess-quadratic", "braess-quartic", "pigou", "sioux-falls")
NODE_COST_SOURCES = ("builtin_sioux", "sidecar_csv", "none")
ALGORITHMS = ("spsa", "de")
_PATH_KEYS = ("net_file", "trips_file", "node_file", "node_cost_file", "samples_file")


class ScenarioError(ContractError):
    pass


@dataclass
class Scenario:
    name: str = "scenario"
    # network: a builtin name or TNTP files
    network: str | None = None
    net_file: str | None = None
    trips_file: str | None = None
    node_file: str | None = None
    demand: float | None = None  # rescales builtin single-OD networks
    # intersection costs
    node_costs: str = "none"
    node_cost_file: str | None = None
    flow_scale: float | None = None
    time_divisor: float = 60.0
    extrapolation: str = "tangent"
    # incentives
    incentive_mode: str = PER_PATH
    bounds: tuple = (0.0, 0.2)
    robustness_weight: float | None = None
    # lower-level solver
    relative_gap_tolerance: float = 1e-6
    max_iterations: int = 5000
    step_rule: str = "auto"
    # upper-level search
    algorithm: str = "de"
    iterations: int = 30000
    spsa_a: float = 0.1
    spsa_alpha: float = 0.40
    spsa_c: float = 0.4
    spsa_gamma: float = 0.03
    spsa_A: float = 1200.0
    spsa_init: str = "uniform"
    spsa_objective_scale: float | str = 1.0
    de_population_factor: int = 15
    de_F: float = 0.8
    de_CR: float = 0.9
    de_max_generations: int = 200
    de_tol: float = 1e-8
    bilevel_relative_gap_tolerance: float | None = None
    # calibration
    samples_file: str | None = None
    noise: float = 0.02
    # intersection simulation
    sim_rates: tuple = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35)
    sim_offsets: tuple = (0.0, 10.0, -10.0)
    sim_rollouts: int = 20
    sim_service_time: float = 2.0
    sim_control_zone_travel: float = 2.0
    sim_horizon: float = 3600.0
    sim_min_headway: float = 1.0
    seed: int = 0
    output_dir: str | None = None
    version: int = SCENARIO_VERSION
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def __post_init__(self):
        self.bounds = tuple(float(b) for b in self.bounds)
        self.sim_rates = tuple(float(r) for r in self.sim_rates)
        self.sim_offsets = tuple(float(o) for o in self.sim_offsets)
        self.validate()

    def validate(self) -> None:
        if self.version != SCENARIO_VERSION:
            raise ScenarioError(f"unsupported scenario version {self.version!r}")
        if self.network is not None and self.net_file is not None:
            raise ScenarioError("give at most one of 'network' and 'net_file'")
        if self.network is not None and self.network not in BUILTIN_NETWORKS:
            raise ScenarioError(f"unknown builtin network {self.network!r}; choose from {BUILTIN_NETWORKS}")
        if self.net_file is not None and self.trips_file is None:
            raise ScenarioError("'net_file' needs 'trips_file'")
        if self.node_costs not in NODE_COST_SOURCES:
            raise ScenarioError(f"node_costs must be one of {NODE_COST_SOURCES}")
        if self.node_costs == "sidecar_csv" and self.node_cost_file is None:
            raise ScenarioError("node_costs 'sidecar_csv' needs 'node_cost_file'")
        if self.incentive_mode not in (PER_PATH, PER_TURN):
            raise ScenarioError(f"incentive_mode must be {PER_PATH!r} or {PER_TURN!r}")
        if len(self.bounds) != 2 or self.bounds[0] > self.bounds[1]:
            raise ScenarioError(f"bounds must be [lo, hi] with lo <= hi, got {list(self.bounds)}")
        if self.algorithm not in ALGORITHMS:
            raise ScenarioError(f"algorithm must be one of {ALGORITHMS}")
        for key in _PATH_KEYS:
            value = getattr(self, key)
            if value is not None and not self.resolve(value).is_file():
                raise ScenarioError(f"{key}: file {self.resolve(value)} does not exist")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "base_dir":
                continue
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    def dump(self, path) -> None:
        text = yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)
        Path(path).write_text(text)

    def replace(self, **changes) -> "Scenario":
        data = asdict(self)
        data.update(changes)
        return Scenario(**data)


def parse_scenario(text: str, base_dir=".") -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a key/value mapping")
    if "version" not in data:
        raise ScenarioError("scenario lacks 'version'")
    known = {f.name for f in fields(Scenario)} - {"base_dir"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ScenarioError(f"unknown scenario keys {unknown}")
    for key, value in data.items():
        if isinstance(value, (dict, list)) and key not in ("bounds", "sim_rates", "sim_offsets"):
            raise ScenarioError(f"{key}: nested values are not allowed")
    try:
        return Scenario(**data, base_dir=Path(base_dir))
    except TypeError as exc:
        raise ScenarioError(str(exc)) from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file {path} does not exist")
    return parse_scenario(path.read_text(), path.parent)
