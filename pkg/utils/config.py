import os

import pyjson5 as json
import pytomlpp
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from services.sampling import AdaptiveConfig

from .constants import DEFAULT_ADAPTIVE, DEFAULT_CONFIG, DEFAULT_IMAGE, DEFAULT_STUDY
from .exceptions import ConfigError
from .functions import merge_defaults
from .types import Activation, ExportFormat, Method, Problem, SigmaXyRule, WorkQuadrature

# Keys every experiment file must name itself
MANDATORY_KEYS = ["problem"]


class StrictModel(BaseModel):
    """Base schema: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


class TopologyConfig(StrictModel):
    n_layers: int = Field(ge=1)
    units_per_layer: int = Field(ge=1)
    activation: Activation
    beta: float
    param_budget: int | None = Field(default=None, ge=1)


class SplitConfig(StrictModel):
    n_x: int = Field(ge=1)
    n_y: int = Field(ge=1)
    psi: float = Field(ge=0.0)
    interface_full: bool


class AdaptiveSection(StrictModel):
    n_fine: int = Field(ge=0)
    n_iter: int = Field(ge=0)
    gamma: float = Field(gt=0.0)
    n_rand: int | None = Field(default=None, ge=1)
    alpha: float = Field(gt=0.0)
    fine_iters: int = Field(ge=0)
    cycle_iters: int = Field(ge=0)


class SamplingConfig(StrictModel):
    mode: str = Field(pattern="^(regular|random|adaptive)$")
    n_per_side: int = Field(ge=2)
    n_boundary: int | None = Field(default=None, ge=1)
    adaptive: AdaptiveSection | None = None

    @model_validator(mode="after")
    def adaptive_needs_section(self):
        if self.mode == "adaptive" and self.adaptive is None:
            raise ValueError("sampling.mode 'adaptive' needs a sampling.adaptive section")
        return self


class OptimizerConfig(StrictModel):
    max_iters: int = Field(ge=0)
    grad_tol: float = Field(gt=0.0)
    step_tol: float = Field(gt=0.0)
    wolfe_c1: float = Field(gt=0.0, lt=1.0)
    wolfe_c2: float = Field(gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def ordered_wolfe(self):
        if not self.wolfe_c1 < self.wolfe_c2:
            raise ValueError("wolfe_c1 must be smaller than wolfe_c2")
        return self


class PhaseConfig(StrictModel):
    E: float = Field(gt=0.0)
    nu: float = Field(gt=-1.0, lt=0.5)


class SyntheticConfig(StrictModel):
    width: int = Field(ge=2)
    height: int = Field(ge=2)
    n_fibers: int = Field(ge=0)
    fiber_length: float = Field(gt=0.0)
    fiber_width: float = Field(gt=0.0)
    noise: float = Field(ge=0.0)


class ImageConfig(StrictModel):
    path: str | None = None
    synthetic: SyntheticConfig
    sigma_px: float = Field(gt=0.0)
    threshold: float = Field(gt=0.0, lt=1.0)
    network: TopologyConfig
    max_iters: int = Field(ge=0)


class MaterialConfig(StrictModel):
    constant: PhaseConfig
    inclusion: PhaseConfig
    matrix: PhaseConfig
    delta: float = Field(gt=0.0)
    radius: float = Field(gt=0.0)
    image: ImageConfig | None = None


class ScalesConfig(StrictModel):
    x_c: float | None = Field(default=None, gt=0.0)
    sigma_c: float | None = Field(default=None, gt=0.0)
    u_c: float | None = Field(default=None, gt=0.0)
    lambda_c: float | None = Field(default=None, gt=0.0)
    mu_c: float | None = Field(default=None, gt=0.0)


class EvaluationConfig(StrictModel):
    n_per_side: int = Field(ge=2)


class StudyConfig(StrictModel):
    kind: str = Field(pattern="^(convergence|split)$")
    methods: list[Method]
    budgets: list[int]
    splits: list[int]
    param_budget: int = Field(ge=1)

    @model_validator(mode="after")
    def positive_entries(self):
        if any(b < 2 for b in self.budgets) or any(s < 1 for s in self.splits):
            raise ValueError("budgets must be >= 2 points per side and splits >= 1")
        return self


class ExperimentConfig(StrictModel):
    """A complete, validated experiment description."""

    problem: Problem
    length: float = Field(gt=0.0)
    sigma_bar: float
    sigma_xy_rule: SigmaXyRule
    work_quadrature: WorkQuadrature
    seed: int = Field(ge=0)
    output_dir: str
    format: ExportFormat
    threads: int | None = Field(default=None, ge=1)
    topology: TopologyConfig
    split: SplitConfig
    sampling: SamplingConfig
    optimizer: OptimizerConfig
    material: MaterialConfig
    scales: ScalesConfig | None = None
    evaluation: EvaluationConfig
    study: StudyConfig | None = None

    @model_validator(mode="after")
    def voxel_needs_image(self):
        if self.problem == "voxel" and self.material.image is None:
            raise ValueError("problem 'voxel' needs a material.image section")
        return self


# Fill the optional sections that were switched on with their own defaults
def _merge_optional_sections(data: dict) -> dict:
    sampling = data.get("sampling") or {}
    if isinstance(sampling.get("adaptive"), dict):
        sampling = {**sampling, "adaptive": merge_defaults(sampling["adaptive"], DEFAULT_ADAPTIVE)}
    material = data.get("material") or {}
    if isinstance(material.get("image"), dict):
        material = {**material, "image": merge_defaults(material["image"], DEFAULT_IMAGE)}
    elif data.get("problem") == "voxel" and "image" not in material:
        material = {**material, "image": dict(DEFAULT_IMAGE)}
    study = data.get("study")
    if isinstance(study, dict):
        study = merge_defaults(study, DEFAULT_STUDY)
    return {**data, "sampling": sampling, "material": material, "study": study}


def _check_adaptive_budget(config: ExperimentConfig) -> None:
    section = config.sampling.adaptive
    if config.sampling.mode != "adaptive" or section is None or section.n_rand is None:
        return
    _, n_ada = AdaptiveConfig.split_budget(config.sampling.n_per_side**2, section.gamma)
    if section.n_rand < n_ada:
        raise ConfigError("sampling.adaptive.n_rand", f"must be at least the {n_ada} adaptive points it is drawn for")


def parse_config(data: dict) -> ExperimentConfig:
    """Merge user data over the defaults and validate."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", f"expected a mapping, got {type(data).__name__}")
    for key in MANDATORY_KEYS:
        if key not in data:
            raise ConfigError(key, "missing mandatory key")

    merged = merge_defaults(_merge_optional_sections(data), DEFAULT_CONFIG)
    try:
        config = ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        error = e.errors()[0]
        key = ".".join(str(part) for part in error["loc"]) or "<root>"
        raise ConfigError(key, error["msg"]) from e
    _check_adaptive_budget(config)
    logger.debug(f"[Config] Validated '{config.problem}' experiment")
    return config


def read_config_file(path: str) -> dict:
    logger.info(f"[Config] Reading config from {path}")
    try:
        with open(path, "r", encoding="utf-8") as file:
            if os.path.splitext(path)[1].lower() == ".toml":
                return pytomlpp.load(file)
            return json.load(file)
    except FileNotFoundError as e:
        raise ConfigError("--config", f"file not found: {path}") from e
    except (ValueError, pytomlpp.DecodeError) as e:
        raise ConfigError("--config", f"cannot parse {path}: {e}") from e


def load_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON or TOML experiment file, apply CLI overrides and validate."""
    data = read_config_file(path)
    if overrides and isinstance(data, dict):
        data = merge_defaults({key: value for key, value in overrides.items() if value is not None}, data)
    return parse_config(data)


def dump_config(config: ExperimentConfig) -> str:
    return json.dumps(config.model_dump())
