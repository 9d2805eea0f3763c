"""Pydantic configuration models for projive runs.

A run configuration can be loaded from YAML or JSON. Every command reads its
own section; command-line flags override file values.

The configuration hierarchy:
- RunConfig (top-level: seed, out, n_jobs)
  - FitConfig          (`projive fit`)
  - SimulateConfig     (`projive simulate`)
    - SimScenario[]
    - FengConfig
  - EvaluateConfig     (`projive evaluate`)
  - SelectRankConfig   (`projive select-rank`)
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from projive.core.constants import (
    DEFAULT_ALPHA,
    DEFAULT_MAX_ITERS,
    DEFAULT_N_PERMUTATIONS,
    DEFAULT_TOL,
    MIN_N_PERMUTATIONS,
)
from projive.core.data import BlockRanks, NoiseModel
from projive.model.initialization import InitMethod
from projive.simulation.scenarios import SimScenario


def _check_ranks(value: str) -> str:
    """Normalize a rank string, raising ValueError when it does not parse."""
    return str(BlockRanks.parse(value))


class FitConfig(BaseModel):
    """Inputs and options of `projive fit`."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    blocks: list[str] = Field(default_factory=list, description="Block CSV files, subjects x features")
    data_dir: str | None = Field(default=None, description="Truth directory, or a root holding many")
    covariates: str | None = Field(default=None, description="Covariate CSV regressed out before fitting")
    ranks: str | None = Field(default=None, description="rJ:rI1,rI2,...; read from truth.json if omitted")
    noise: NoiseModel = NoiseModel.ISOTROPIC
    init: InitMethod = InitMethod.CHOLESKY
    tol: Annotated[float, Field(gt=0)] = DEFAULT_TOL
    max_iters: Annotated[int, Field(ge=1)] = DEFAULT_MAX_ITERS
    center: bool = True
    scale: bool = False

    @field_validator("ranks")
    @classmethod
    def validate_ranks(cls, v: str | None) -> str | None:
        """Ranks must follow the rJ:rI1,rI2,... syntax."""
        return None if v is None else _check_ranks(v)

    @model_validator(mode="after")
    def validate_source(self) -> FitConfig:
        """Exactly one data source."""
        if self.blocks and self.data_dir is not None:
            msg = "Give either blocks or data_dir, not both"
            raise ValueError(msg)
        if self.data_dir is not None and self.covariates is not None:
            msg = "covariates apply to block files only"
            raise ValueError(msg)
        return self


class FengConfig(BaseModel):
    """Parameters of the sparse two-block design."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n: Annotated[int, Field(ge=2)] = 100
    p1: Annotated[int, Field(ge=10)] = 100
    p2: Annotated[int, Field(ge=10)] = 1000
    noise_sd: Annotated[float, Field(ge=0)] = 1.0


class SimulateConfig(BaseModel):
    """Design of `projive simulate`.

    Cells come from `scenarios`, from the factorial design (`grid:
    factorial`) or from the sparse two-block design (`grid: feng`).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    grid: Literal["scenarios", "factorial", "feng"] = "scenarios"
    scenarios: list[SimScenario] = Field(default_factory=list)
    feng: FengConfig = Field(default_factory=FengConfig)
    replicates: Annotated[int, Field(ge=1)] = 1
    factorial_n: Annotated[int, Field(ge=2)] = 1000

    @model_validator(mode="after")
    def validate_cells(self) -> SimulateConfig:
        """Scenario grids need at least one scenario."""
        if self.grid == "scenarios" and not self.scenarios:
            msg = "grid 'scenarios' requires at least one scenario"
            raise ValueError(msg)
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            msg = "Scenario names must be unique"
            raise ValueError(msg)
        return self


class EvaluateConfig(BaseModel):
    """Inputs of `projive evaluate`."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    truth_dir: str | None = Field(default=None, description="Root of the truth directories")
    fit_dir: str | None = Field(default=None, description="Root of the fit outputs; truth_dir itself if omitted")
    method: str = Field(default="projive", description="Label of the evaluated fits in the report")
    digits: Annotated[int, Field(ge=0, le=10)] = 2


class SelectRankConfig(BaseModel):
    """Options of `projive select-rank`."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["permutation", "ic", "both"] = "permutation"
    blocks: list[str] = Field(default_factory=list)
    data_dir: str | None = None
    total_ranks: tuple[int, int] | None = Field(default=None, description="PCA ranks r_J + r_Ik per block")
    n_perm: Annotated[int, Field(ge=MIN_N_PERMUTATIONS)] = DEFAULT_N_PERMUTATIONS
    alpha: Annotated[float, Field(gt=0, lt=1)] = DEFAULT_ALPHA
    candidates: list[str] = Field(default_factory=list, description="Rank strings for the IC grid")
    criterion: Literal["aic", "bic"] = "bic"
    center: bool = True

    @field_validator("candidates")
    @classmethod
    def validate_candidates(cls, v: list[str]) -> list[str]:
        """Every candidate must be a valid rank string."""
        return [_check_ranks(c) for c in v]


class RunConfig(BaseModel):
    """Top-level projive configuration."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 0
    out: str = "output"
    n_jobs: int = Field(default=1, description="joblib workers; -1 uses every core")

    fit: FitConfig = Field(default_factory=FitConfig)
    simulate: SimulateConfig = Field(
        default_factory=lambda: SimulateConfig(scenarios=[SimScenario(name="default")])
    )
    evaluate: EvaluateConfig = Field(default_factory=EvaluateConfig)
    select_rank: SelectRankConfig = Field(default_factory=SelectRankConfig)

    @field_validator("n_jobs")
    @classmethod
    def validate_n_jobs(cls, v: int) -> int:
        """joblib accepts positive counts or negative counts from the core total."""
        if v == 0:
            msg = "n_jobs must not be 0"
            raise ValueError(msg)
        return v


def load_config(path: str | Path) -> RunConfig:
    """Load a run configuration from a YAML or JSON file.

    Args:
        path: Path to configuration file (.yaml/.yml or .json).

    Returns:
        Validated RunConfig object.

    Raises:
        FileNotFoundError: If file doesn't exist.
        ValueError: If configuration is invalid.
    """
    path = Path(path)

    if not path.exists():
        msg = f"Configuration file not found: {path}"
        raise FileNotFoundError(msg)

    with path.open(encoding="utf-8") as f:
        if path.suffix in (".yaml", ".yml"):
            # safe_load only builds plain types; never yaml.load on user files.
            data = yaml.safe_load(f)
        else:
            data = json.load(f)

    return RunConfig.model_validate(data or {})


def save_config(config: RunConfig, path: str | Path) -> None:
    """Save a run configuration to a YAML or JSON file.

    Args:
        config: Configuration to save.
        path: Output file path; the suffix selects the format.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    data = config.model_dump(mode="json")

    with path.open("w", encoding="utf-8") as f:
        if path.suffix in (".yaml", ".yml"):
            yaml.safe_dump(data, f, default_flow_style=False, sort_keys=False)
        else:
            json.dump(data, f, indent=2)


def validate_config(data: dict[str, Any]) -> RunConfig:
    """Validate configuration data without loading from file.

    Raises:
        ValueError: If configuration is invalid.
    """
    return RunConfig.model_validate(data)
