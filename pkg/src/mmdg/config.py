"""Experiment configuration (YAML documents with defaults filled in)."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .cfl import DEFAULT_CFL, PRESETS
from .limiter import LimiterSpec
from .mmpde import MmpdeParams
from .problems import PROBLEMS, get_problem

PROBLEM_IDS = tuple(PROBLEMS) + ("p0_linear_stability", "dt_comparison")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class ExperimentConfig:
    problem: str
    k: int = 1
    preset: str = "he"
    c_cfl: float | None = None
    n_cells: list[int] | None = None
    t_end: float | None = None
    outputs: int = 10
    moving: bool = True
    limiter: dict = field(default_factory=lambda: {"kind": "minmod", "tvb_m": 0.0})
    mmpde: dict = field(default_factory=dict)
    boundary: str | None = None  # "periodic" or "transmissive"; None keeps the problem default
    allow_unstable: bool = False
    record_tables: bool = False
    dt_min: float = 1e-13
    seed: int = 0
    # stability-lab options
    velocity: str = "constant1d"
    steps: int = 500
    amplitude: float = 0.3
    pairings: list[str] = field(default_factory=lambda: ["ee", "he", "hh"])

    def __post_init__(self):
        if self.problem not in PROBLEM_IDS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {list(PROBLEM_IDS)}")
        if self.k not in DEFAULT_CFL:
            raise ConfigError("k must be 0, 1, 2 or 3")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.preset == "eh" and not self.allow_unstable:
            raise ConfigError("preset 'eh' violates alpha_CFL >= alpha_LF; set allow_unstable: true")
        if self.c_cfl is not None and not self.c_cfl > 0:
            raise ConfigError("c_cfl must be positive")
        if self.outputs < 0:
            raise ConfigError("outputs must be non-negative")
        if self.boundary not in (None, "periodic", "transmissive"):
            raise ConfigError("boundary must be 'periodic' or 'transmissive'")
        if self.problem in PROBLEMS:
            prob = get_problem(self.problem)
            if self.n_cells is not None and len(self.n_cells) != prob.dim:
                raise ConfigError(f"n_cells needs {prob.dim} entries for {self.problem}")
        if self.n_cells is not None and any(int(n) < 1 for n in self.n_cells):
            raise ConfigError("n_cells entries must be at least 1")
        try:
            self.limiter_spec()
            self.mmpde_params()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    # resolved values ------------------------------------------------
    @property
    def cfl_number(self) -> float:
        return DEFAULT_CFL[self.k] if self.c_cfl is None else float(self.c_cfl)

    @property
    def final_time(self) -> float:
        if self.t_end is not None:
            return float(self.t_end)
        return get_problem(self.problem).t_end if self.problem in PROBLEMS else 1.0

    @property
    def cells(self) -> tuple[int, ...]:
        if self.n_cells is not None:
            return tuple(int(n) for n in self.n_cells)
        return get_problem(self.problem).n_cells if self.problem in PROBLEMS else (64,)

    def periodic(self) -> tuple[bool, ...]:
        prob = get_problem(self.problem)
        if self.boundary is None:
            return prob.periodic
        return (self.boundary == "periodic",) * prob.dim

    def limiter_spec(self) -> LimiterSpec:
        return LimiterSpec(**self.limiter)

    def mmpde_params(self) -> MmpdeParams:
        return MmpdeParams(**self.mmpde)

    def output_times(self) -> list[float]:
        T = self.final_time
        n = max(self.outputs, 1)
        return [T * i / n for i in range(n + 1)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        if "problem" not in data:
            raise ConfigError("configuration needs a 'problem'")
        return cls(**copy.deepcopy(data))


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    data = data or {}
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
