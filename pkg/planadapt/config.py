"""Run configuration: flat ``key = value`` files validated into ``RunConfig``."""

from __future__ import annotations

from pathlib import Path

from pydantic import (
    BaseModel,
    ConfigDict,
    ValidationError,
    field_validator,
    model_validator,
)

from planadapt.adapt import AdaptConfig, PatternSearchState, Variant
from planadapt.distance import DistanceEstimator, EstimatorKind
from planadapt.env import SHIPPED_MAPS, MazeWorld, ReactionModel, load_maze_file
from planadapt.logger import get_logger
from planadapt.rollout import RolloutProtocol

logger = get_logger(__name__)

DEFAULT_CONFIG = Path(__file__).parent / "defaults" / "default.cfg"
SWEEPABLE = ("w", "e")


class ConfigError(ValueError):
    pass


def _split_list(value):
    if isinstance(value, str):
        return [item for item in value.replace(",", " ").split() if item]
    return value


class SweepSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    param: str = "w"
    values: list[float] = [50.0, 100.0, 200.0, 400.0, 800.0]
    fixed_param: str = "e"
    fixed_value: float = 5.0
    repetitions: int = 1

    @field_validator("param", "fixed_param")
    @classmethod
    def check_param(cls, param: str) -> str:
        if param not in SWEEPABLE:
            raise ValueError(f"sweep parameter must be one of {SWEEPABLE}, got {param!r}")
        return param

    @field_validator("values", mode="before")
    @classmethod
    def check_values(cls, values):
        values = _split_list(values)
        if not values:
            raise ValueError("sweep values must not be empty")
        return values

    @field_validator("repetitions")
    @classmethod
    def check_repetitions(cls, repetitions: int) -> int:
        if repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {repetitions}")
        return repetitions

    @model_validator(mode="after")
    def check_distinct(self) -> SweepSpec:
        if self.param == self.fixed_param:
            raise ValueError("swept and fixed parameter must differ")
        return self

    @model_validator(mode="after")
    def check_ranges(self) -> SweepSpec:
        # same preconditions as build_graph: w >= 1, e > 0
        for name, value in [
            *((self.param, v) for v in self.values),
            (self.fixed_param, self.fixed_value),
        ]:
            if name == "w" and value < 1:
                raise ValueError(f"w must be >= 1, got {value}")
            if name == "e" and value <= 0:
                raise ValueError(f"e must be > 0, got {value}")
        return self


class RunConfig(BaseModel):
    """Every tunable of a run. Ranges mirror the checks of the owning modules."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    map: str = "default"
    cell_size: float = 1.0
    noise_std: float = 0.3
    max_step: float = 1.0
    goal_radius: float = 1.0
    clearance: float = 1.5

    estimator: EstimatorKind = EstimatorKind.ORACLE
    resolution: int = 4
    scale: float = 1.0
    noise_rel_std: float = 0.0
    pierce_fraction: float = 0.0
    pierce_cap: float = 10.0
    pierce_salt: int = 0

    step_scale: float = 1.0
    extra_noise_std: float = 0.0
    budget_factor: float = 3.0
    budget_floor: int = 5

    cth: float = 0.05
    w_init: float = 1.0
    w_i: float = 3.0
    w_d: float = 1.0
    e_init: float = 1.0
    e_i: float = 1.0
    e_d: float = 0.25
    n: int = 3
    rho: float = 2.0
    gamma: float = 0.9
    tth: float = 0.1
    count: int = 4
    max_iterations: int = 150

    n_settings: int = 20
    tasks_per_setting: int = 5
    max_total_steps: int = 0
    replan: bool = False
    workers: int = 1
    lookup_cost: float = 1e-3

    seed: int = 0
    variant: Variant = Variant.ALG2
    out_dir: str = "out"

    sweep_param: str = "w"
    sweep_values: str = "50,100,200,400,800"
    sweep_fixed: str = "e=5"
    sweep_repetitions: int = 1

    @field_validator("map")
    @classmethod
    def check_map(cls, map: str) -> str:
        if map not in SHIPPED_MAPS and not Path(map).is_file():
            raise ValueError(
                f"map {map!r} is neither a file nor one of {sorted(SHIPPED_MAPS)}"
            )
        return map

    @field_validator(
        "cell_size", "max_step", "goal_radius", "scale", "pierce_cap", "w_i", "w_d",
        "e_i", "e_d", "tth",
    )
    @classmethod
    def check_positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError(f"must be > 0, got {value}")
        return value

    @field_validator(
        "noise_std", "noise_rel_std", "extra_noise_std", "max_total_steps",
        "clearance", "lookup_cost",
    )
    @classmethod
    def check_non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError(f"must be >= 0, got {value}")
        return value

    @field_validator(
        "resolution", "budget_floor", "count", "max_iterations", "n_settings",
        "tasks_per_setting", "workers", "w_init", "e_init",
    )
    @classmethod
    def check_at_least_one(cls, value: float) -> float:
        if value < 1:
            raise ValueError(f"must be >= 1, got {value}")
        return value

    @field_validator("cth")
    @classmethod
    def check_cth(cls, cth: float) -> float:
        if not 0 < cth < 1:
            raise ValueError(f"cth must be in (0, 1), got {cth}")
        return cth

    @field_validator("gamma")
    @classmethod
    def check_gamma(cls, gamma: float) -> float:
        if not 0 < gamma < 1:
            raise ValueError(f"gamma must be in (0, 1), got {gamma}")
        return gamma

    @field_validator("pierce_fraction")
    @classmethod
    def check_fraction(cls, fraction: float) -> float:
        if not 0 <= fraction <= 1:
            raise ValueError(f"pierce_fraction must be in [0, 1], got {fraction}")
        return fraction

    @field_validator("step_scale")
    @classmethod
    def check_step_scale(cls, step_scale: float) -> float:
        if not 0 < step_scale <= 1:
            raise ValueError(f"step_scale must be in (0, 1], got {step_scale}")
        return step_scale

    @field_validator("n")
    @classmethod
    def check_n(cls, n: int) -> int:
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        return n

    @field_validator("rho", "budget_factor")
    @classmethod
    def check_factor(cls, value: float) -> float:
        if value < 1:
            raise ValueError(f"must be >= 1, got {value}")
        return value

    def world(self) -> MazeWorld:
        return load_maze_file(
            self.map,
            cell_size=self.cell_size,
            noise_std=self.noise_std,
            max_step=self.max_step,
            goal_radius=self.goal_radius,
            clearance=self.clearance,
        )

    def estimator_spec(self) -> DistanceEstimator:
        return DistanceEstimator(
            kind=self.estimator,
            resolution=self.resolution,
            scale=self.scale,
            noise_rel_std=self.noise_rel_std,
            pierce_fraction=self.pierce_fraction,
            pierce_cap=self.pierce_cap,
            pierce_salt=self.pierce_salt,
        )

    def reaction_model(self) -> ReactionModel:
        return ReactionModel(
            step_scale=self.step_scale,
            extra_noise_std=self.extra_noise_std,
            budget_factor=self.budget_factor,
            budget_floor=self.budget_floor,
        )

    def protocol(self) -> RolloutProtocol:
        return RolloutProtocol(
            n_settings=self.n_settings,
            tasks_per_setting=self.tasks_per_setting,
            replan=self.replan,
            max_total_steps=self.max_total_steps or None,
            workers=self.workers,
            lookup_cost=self.lookup_cost,
        )

    def _state(self, value: float, i: float, d: float) -> PatternSearchState:
        return PatternSearchState(
            value=value,
            i=i,
            d=d,
            n=self.n,
            rho=self.rho,
            gamma=self.gamma,
            tth=self.tth,
            count_reset=self.count,
            variant=self.variant,
        )

    def adapt_config(self) -> AdaptConfig:
        """Fresh search states; every call starts a new adaptation."""
        return AdaptConfig(
            cth=self.cth,
            w_state=self._state(self.w_init, self.w_i, self.w_d),
            e_state=self._state(self.e_init, self.e_i, self.e_d),
            max_iterations=self.max_iterations,
        )

    def sweep_spec(self) -> SweepSpec:
        name, sep, value = self.sweep_fixed.partition("=")
        if not sep:
            raise ConfigError(
                f"sweep_fixed must look like 'e=5', got {self.sweep_fixed!r}"
            )
        try:
            return SweepSpec(
                param=self.sweep_param,
                values=self.sweep_values,
                fixed_param=name.strip(),
                fixed_value=value.strip(),
                repetitions=self.sweep_repetitions,
            )
        except ValidationError as e:
            raise ConfigError(f"invalid sweep: {e}") from e


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment.

    Test cases:
    - a line without '=', a duplicated key
    """
    entries: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw!r}")
        if key in entries:
            raise ConfigError(f"line {number}: duplicate key {key!r}")
        entries[key] = value
    return entries


def load_config(
    path: str | Path | None = None, overrides: dict | None = None
) -> RunConfig:
    """Read and validate a config file; ``overrides`` (CLI flags) win.

    Without a path the shipped defaults apply. A relative ``map`` path is
    looked up next to the config file first.
    """
    entries: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        entries = parse_config_text(path.read_text())
        map_value = entries.get("map")
        if map_value and map_value not in SHIPPED_MAPS:
            beside = path.parent / map_value
            if not Path(map_value).is_absolute() and beside.is_file():
                entries["map"] = str(beside)
    entries.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        config = RunConfig(**entries)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    logger.debug(f"load_config returned with {config.model_dump()}")
    return config
