"""Configuration for meshdiff: defaults, TOML files and environment overrides."""

import os
import sys
from pathlib import Path
from typing import Any, Dict, Iterator, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import ValidationError
from .models import HealingParams, ModelKind, Variant

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_ENV_VAR = "MESHDIFF_CONFIG"
CACHE_DIR_ENV_VAR = "MESHDIFF_CACHE_DIR"

Vector3 = Tuple[float, float, float]


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MeshGenConfig(Section):
    """Physically driven mesh generation."""
    n: int = Field(default=800, ge=2)
    k: int = Field(default=10, ge=1)
    seed: int = 42
    center: Vector3 = (0.5, 0.5, 0.5)
    semi_axes: Vector3 = (0.6, 0.4, 0.3)
    delta: float = Field(default=0.05, ge=0.0)
    refresh_every: int = Field(default=50, ge=1)
    wound_radius: float = Field(default=0.6, gt=0.0)
    diffusivity: float = Field(default=0.05, gt=0.0)
    diffusivity_contrast: float = Field(default=0.0, ge=0.0)
    epsilon: float = Field(default=1e-6, gt=0.0)
    healing: HealingParams = Field(default_factory=HealingParams)


class PointCloudConfig(Section):
    """Synthetic volume point clouds inside the ellipsoid."""
    kind: Literal["uniform", "jittered", "clustered", "poisson"] = "uniform"
    n: int = Field(default=300, ge=2)
    k: int = Field(default=10, ge=1)
    seed: int = 0
    center: Vector3 = (0.5, 0.5, 0.5)
    semi_axes: Vector3 = (0.6, 0.4, 0.3)
    delta: float = Field(default=0.05, ge=0.0)
    diffusivity: float = Field(default=0.05, gt=0.0)
    epsilon: float = Field(default=1e-6, gt=0.0)


class IngestConfig(Section):
    """Real-mesh conversion."""
    n: int = Field(default=2000, ge=1)
    k: int = Field(default=10, ge=1)
    seed: int = 7
    epsilon: float = Field(default=1e-6, gt=0.0)
    diffusivity: float = Field(default=0.05, gt=0.0)
    rotation: List[List[float]] = Field(
        default_factory=lambda: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    )

    @field_validator("rotation")
    @classmethod
    def _square(cls, v):
        if len(v) != 3 or any(len(row) != 3 for row in v):
            raise ValueError("rotation must be a 3x3 matrix")
        return v


class FDConfig(Section):
    """Finite-difference instability demo."""
    nx: int = Field(default=100, ge=3)
    ny: int = Field(default=100, ge=3)
    perturb: float = Field(default=0.0, ge=0.0, lt=1.0)
    D: float = Field(default=4.0, gt=0.0)
    n_steps: int = Field(default=1000, ge=0)
    dt: Optional[float] = Field(default=None, ge=0.0, description="defaults to the CFL step")
    seed: int = 1
    disc_radius: float = Field(default=0.2, gt=0.0)
    divergence_factor: float = Field(default=10.0, gt=1.0)
    record_every: int = Field(default=50, ge=1)


class CNConfig(Section):
    """Crank-Nicolson reference solver."""
    variant: Variant = Variant.IRREGULAR
    T: float = Field(default=1.0, gt=0.0)
    nt: int = Field(default=100, ge=1)
    normalized: bool = True
    boundary_value: float = 0.0
    tol: float = Field(default=1e-10, gt=0.0)
    max_iter: Optional[int] = Field(default=None, ge=1)


class ModelConfig(Section):
    """Architecture of the learnable models."""
    kind: ModelKind = ModelKind.OCGNN
    hidden: int = Field(default=64, ge=1)
    layers: int = Field(default=3, ge=1)
    omegas: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0])
    anchor_init: float = 1.0
    use_anchor: bool = True
    use_time_encoding: bool = True
    seed: int = 0

    @field_validator("omegas")
    @classmethod
    def _positive(cls, v):
        if not v or any(w <= 0 for w in v):
            raise ValueError("omegas must be a non-empty list of positive frequencies")
        return v


class TrainConfig(Section):
    """Physics-informed training."""
    epochs: int = Field(default=300, ge=0)
    lr: float = Field(default=3e-3, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    T: float = Field(default=1.0, gt=0.0)
    nt: int = Field(default=20, ge=1)
    n_samples: Optional[int] = Field(
        default=None, ge=1, description="time points per epoch; all when unset"
    )
    seed: int = 0
    supervision: Literal["physics", "data"] = "physics"
    reference_variant: Variant = Variant.IRREGULAR
    boundary_value: float = 0.0
    lambda_init: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    lambda_min: float = Field(default=0.1, gt=0.0)
    lambda_max: float = Field(default=10.0, gt=0.0)
    adaptive_lambdas: bool = True
    pde_scaling: bool = True
    scale_momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    scale_epsilon: float = Field(default=1e-8, gt=0.0)
    use_ptensor: bool = True
    normalize_ptensor: bool = False
    norm_momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    log_every: int = Field(default=10, ge=1)


class BenchmarkConfig(Section):
    """Benchmark roster."""
    models: List[str] = Field(
        default_factory=lambda: [
            "ocgnn", "ocgnn-untrained", "gcn", "mlp", "mlp-data", "cn-irregular", "cn-pde"
        ]
    )
    reference: Variant = Variant.IRREGULAR
    seeds: List[int] = Field(default_factory=lambda: [0])
    use_cache: bool = True


class AppConfig(Section):
    """All configuration sections."""
    mesh: MeshGenConfig = Field(default_factory=MeshGenConfig)
    cloud: PointCloudConfig = Field(default_factory=PointCloudConfig)
    ingest: IngestConfig = Field(default_factory=IngestConfig)
    fd: FDConfig = Field(default_factory=FDConfig)
    cn: CNConfig = Field(default_factory=CNConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    benchmark: BenchmarkConfig = Field(default_factory=BenchmarkConfig)

    def section(self, name: str, **overrides: Any) -> BaseModel:
        """Copy of one section with non-None overrides applied and validated."""
        current = getattr(self, name)
        changes = {k: v for k, v in overrides.items() if v is not None}
        if not changes:
            return current
        return type(current).model_validate({**current.model_dump(), **changes})


def load_config(path: Optional[Union[str, Path]] = None) -> AppConfig:
    """
    Build the effective configuration.

    ``path`` wins over the MESHDIFF_CONFIG environment variable; with neither, the
    built-in defaults are returned.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    if path is None:
        return AppConfig()
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ValidationError(f"{path}: invalid TOML ({e})") from e
    return AppConfig.model_validate(data)


def iter_config_lines(config: AppConfig) -> Iterator[str]:
    """TOML-style ``key = value`` lines for every effective setting."""
    yield from _emit(config.model_dump(mode="json"), prefix="")


def _emit(data: Dict[str, Any], prefix: str) -> Iterator[str]:
    scalars = {k: v for k, v in data.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in data.items() if isinstance(v, dict)}
    if prefix and scalars:
        yield f"[{prefix}]"
    for key, value in scalars.items():
        if value is None:
            yield f"# {key} = (unset)"
        else:
            yield f"{key} = {_toml_value(value)}"
    for key, value in tables.items():
        yield from _emit(value, f"{prefix}.{key}" if prefix else key)


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return repr(value)
