"""Run configuration: defaults, strict parsing and validation."""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields

import yaml

from .errors import ConfigError
from .scheduler import is_power_of_two

OUTPUT_ENV = "BMLMC_OUTPUT_DIR"
MODES = ("field", "qoi", "both")
COST_MODES = ("wallclock", "virtual")
SAMPLERS = ("pde", "synthetic")


@dataclass(frozen=True)
class MaternConfig:
    lam: float = 0.3
    nu: float = 1.0
    sigma: float = 1.0


@dataclass(frozen=True)
class TransportConfig:
    final_time: float = 0.5
    snapshot_times: tuple = (0.125, 0.25, 0.375, 0.5)
    base_steps: int = 8


@dataclass(frozen=True)
class RunConfig:
    dim: int = 2
    base_cells: int = 2
    initial_levels: int = 2
    init_samples: tuple = (8, 4, 2)
    time_budget: float = 60.0
    memory_budget_mb: float = 2048.0
    num_units: int = 8
    theta: float = 0.5
    eta: float = 0.7
    matern: MaternConfig = field(default_factory=MaternConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    mode: str = "field"
    cost_mode: str = "wallclock"
    virtual_cost: float = 1e-4
    run_seed: int = 0
    output_dir: str = "bmlmc-runs"
    max_level: int = 8
    max_rounds: int = 1000
    sampler: str = "pde"

    @property
    def keep_fields(self) -> bool:
        return self.mode in ("field", "both")

    def problems(self) -> list[str]:
        out = []
        if self.dim not in (1, 2):
            out.append(f"dim must be 1 or 2, got {self.dim}")
        if not is_power_of_two(self.num_units):
            out.append(f"num_units must be a power of two, got {self.num_units}")
        for name in ("theta", "eta"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                out.append(f"{name} must lie in (0, 1), got {value}")
        if self.base_cells < 1:
            out.append("base_cells must be >= 1")
        if self.initial_levels < 0:
            out.append("initial_levels must be >= 0")
        if len(self.init_samples) != self.initial_levels + 1:
            out.append(
                f"init_samples needs one entry per level 0..{self.initial_levels}, got {len(self.init_samples)}"
            )
        if any(isinstance(m, bool) or not isinstance(m, int) or m < 2 for m in self.init_samples):
            out.append("every init_samples entry must be an integer >= 2 (variances need two samples)")
        if not self.time_budget > 0:
            out.append("time_budget must be positive")
        if not self.memory_budget_mb > 0:
            out.append("memory_budget_mb must be positive")
        if not self.virtual_cost > 0:
            out.append("virtual_cost must be positive")
        if self.mode not in MODES:
            out.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.cost_mode not in COST_MODES:
            out.append(f"cost_mode must be one of {COST_MODES}, got {self.cost_mode!r}")
        if self.sampler not in SAMPLERS:
            out.append(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.max_level < self.initial_levels:
            out.append("max_level must be >= initial_levels")
        if self.max_rounds < 1:
            out.append("max_rounds must be >= 1")
        m = self.matern
        if not (m.lam > 0 and m.nu > 0 and m.sigma > 0):
            out.append("Matern lam, nu and sigma must be positive")
        elif self.dim in (1, 2) and not math.isclose((m.nu + self.dim / 2) / 2, 1.0):
            zeta = (m.nu + self.dim / 2) / 2
            out.append(f"zeta = (nu + d/2)/2 must equal 1, got {zeta:g} for nu={m.nu}, d={self.dim}")
        t = self.transport
        if not t.final_time > 0:
            out.append("transport final_time must be positive")
        if t.base_steps < 1:
            out.append("transport base_steps must be >= 1")
        if any(not isinstance(s, (int, float)) or not 0 <= s <= t.final_time for s in t.snapshot_times):
            out.append("snapshot times must lie in [0, final_time]")
        return out

    def validate(self) -> "RunConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def resolved_output_dir(self) -> str:
        return os.environ.get(OUTPUT_ENV) or self.output_dir

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["init_samples"] = list(self.init_samples)
        d["transport"]["snapshot_times"] = list(self.transport.snapshot_times)
        return d


_NESTED = {"matern": MaternConfig, "transport": TransportConfig}
_TUPLES = {"init_samples", "snapshot_times"}


def _build(cls, data: dict, where: str, problems: list):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            problems.append(f"unknown key {where}{key!r}")
            continue
        if key in _NESTED:
            if value is None:
                value = {}
            if not isinstance(value, dict):
                problems.append(f"{where}{key} must be a mapping")
                continue
            value = _build(_NESTED[key], value, f"{key}.", problems)
        elif key in _TUPLES:
            if not isinstance(value, (list, tuple)):
                problems.append(f"{where}{key} must be a list")
                continue
            value = tuple(value)
        else:
            default = known[key].default
            if isinstance(default, bool) or not isinstance(default, (int, float)) or value is None:
                pass
            elif isinstance(default, int) and not isinstance(value, bool) and isinstance(value, int):
                pass
            elif isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
                value = float(value)
            else:
                problems.append(f"{where}{key} has the wrong type ({type(value).__name__})")
                continue
        kwargs[key] = value
    return cls(**kwargs)


def parse_config(text: str) -> RunConfig:
    """Parse a YAML (or JSON) document; unknown keys and invalid values are all reported together."""
    data = yaml.safe_load(text) if text and text.strip() else {}
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration document must be a mapping")
    problems: list[str] = []
    cfg = _build(RunConfig, data, "", problems)
    problems += cfg.problems()
    if problems:
        raise ConfigError(problems)
    return cfg


def emit_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
