"""
Application settings and run configuration.

`Settings` holds process-level options (logging, serving). `RunConfig` collects
every hyperparameter of a training run; it is built from a flat `key=value`
file plus `--set key=value` overrides and validated before training starts.
"""
import hashlib
import json
from enum import StrEnum
from pathlib import Path
from typing import Any, Iterable, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class ConfigError(Exception):
    """Run configuration could not be parsed or validated."""
    pass


class Settings(BaseSettings):
    """Application settings."""
    model_config = SettingsConfigDict(
        env_prefix="BGCH_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore"
    )

    # Application
    app_env: Literal["development", "production", "test"] = "development"
    log_level: str = "INFO"
    log_dir: Path = Path("./logs")

    # Storage
    runtime_dir: Path = Path("./data/runtime")
    index_path: Path | None = None  # HashTable file served by the API on startup

    def __init__(self, **kwargs):
        """Create directories on startup."""
        super().__init__(**kwargs)
        self.runtime_dir.mkdir(parents=True, exist_ok=True)


settings = Settings()


# --- Run configuration ---

class EstimatorKind(StrEnum):
    """Backward surrogate used for sign(.)."""
    FOURIER = "fourier"
    STE = "ste"
    TANH = "tanh"


class AlphaNoise(StrEnum):
    """Distribution of the noise added to rescaling factors."""
    UNIFORM01 = "uniform01"
    CENTERED = "centered"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DataConfig(_Section):
    source: Literal["file", "planted"] = "planted"
    train: Path | None = None
    test: Path | None = None
    split_ratio: float = Field(default=0.2, gt=0.0, lt=1.0)
    split_seed: int = 0

    @model_validator(mode="after")
    def _train_file_required(self) -> "DataConfig":
        if self.source == "file" and self.train is None:
            raise ValueError("data.train is required when data.source=file")
        return self


class PlantedConfig(_Section):
    blocks: int = Field(default=4, ge=1)
    nodes_per_block: int = Field(default=50, ge=1)
    p_in: float = Field(default=0.3, ge=0.0, le=1.0)
    p_out: float = Field(default=0.01, ge=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _p_in_dominates(self) -> "PlantedConfig":
        if self.p_in <= self.p_out:
            raise ValueError("planted.p_in must be greater than planted.p_out")
        return self


class ModelConfig(_Section):
    d: int = Field(default=64, ge=1)
    layers: int = Field(default=2, ge=1, le=4)
    init_scale: float = Field(default=0.1, gt=0.0)
    seed: int = 0
    rescale: bool = True
    topology_aware: bool = True


class DispersionConfig(_Section):
    enabled: bool = False
    epsilon: float = Field(default=0.5, gt=0.0, lt=1.0)
    k: int = Field(default=2, ge=1)
    seed: int = 0


class AugmentationConfig(_Section):
    tau: float = Field(default=0.1, gt=0.0)
    sigma: float = Field(default=0.2, gt=0.0)
    seed: int = 0
    alpha_noise: AlphaNoise = AlphaNoise.UNIFORM01
    grad_through_alpha: bool = True


class LossConfig(_Section):
    lambda1: float = Field(default=5e-2, ge=0.0)
    lambda2: float = Field(default=1e-5, ge=0.0)
    use_bpr: bool = True
    use_cl1: bool = True
    use_cl2: bool = True


class EstimatorConfig(_Section):
    kind: EstimatorKind = EstimatorKind.FOURIER
    n: int = Field(default=16, ge=1)
    h: float = Field(default=1.0, gt=0.0)
    tanh_beta: float = Field(default=1.0, gt=0.0)


class OptimConfig(_Section):
    lr: float = Field(default=1e-3, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)


class TrainConfig(_Section):
    epochs: int = Field(default=50, ge=0)
    batch_size: int = Field(default=256, ge=1)
    seed: int = 0
    neg_samples: int = Field(default=1, ge=1)
    log_every: int = Field(default=1, ge=1)


class EvalConfig(_Section):
    topn: list[int] = Field(default_factory=lambda: [20, 50, 100])
    every: int = Field(default=0, ge=0)  # 0: evaluate once after training

    @field_validator("topn", mode="before")
    @classmethod
    def parse_topn(cls, v: Any) -> Any:
        """Accept "20,50,100" as well as a list."""
        if isinstance(v, str):
            return [int(part) for part in v.split(",") if part.strip()]
        return v

    @field_validator("topn")
    @classmethod
    def check_topn(cls, v: list[int]) -> list[int]:
        if not v or any(n < 1 for n in v):
            raise ValueError("eval.topn must be a non-empty list of positive integers")
        return sorted(set(v))


class OutputConfig(_Section):
    dir: Path = Path("./runs/default")
    table_name: str = "hash_table.bgch"


class RunConfig(BaseSettings):
    """Every hyperparameter of a training run, grouped by module."""
    model_config = SettingsConfigDict(
        env_prefix="BGCH_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    data: DataConfig = Field(default_factory=DataConfig)
    planted: PlantedConfig = Field(default_factory=PlantedConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    dispersion: DispersionConfig = Field(default_factory=DispersionConfig)
    cl: AugmentationConfig = Field(default_factory=AugmentationConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _dispersion_within_layers(self) -> "RunConfig":
        if self.dispersion.enabled and self.dispersion.k > self.model.layers:
            raise ValueError("dispersion.k must not exceed model.layers")
        return self

    def resolved(self) -> dict[str, Any]:
        """JSON-ready view used for manifests and hashing."""
        return json.loads(self.model_dump_json())

    def content_hash(self) -> str:
        json_str = json.dumps(self.resolved(), sort_keys=True)
        return hashlib.sha256(json_str.encode()).hexdigest()[:16]


def parse_config_lines(lines: Iterable[str]) -> dict[str, Any]:
    """
    Parse flat `section.key=value` lines into a nested dict.
    Values stay strings; pydantic coerces them.
    """
    nested: dict[str, Any] = {}
    for line_number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"Expected key=value at line {line_number}: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"Empty key at line {line_number}")
        _set_dotted(nested, key, value)
    return nested


def _set_dotted(target: dict[str, Any], key: str, value: str) -> None:
    *parents, leaf = key.split(".")
    node = target
    for part in parents:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"Key {key!r} conflicts with a scalar value")
    node[leaf] = value


def load_run_config(path: Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Build a RunConfig from an optional config file and `key=value` overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, mode="r", encoding="utf-8") as f:
                values = parse_config_lines(f)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")

    override_values = parse_config_lines(overrides)
    _merge(values, override_values)

    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e}") from e


def _merge(base: dict[str, Any], extra: dict[str, Any]) -> None:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
