"""Pydantic data models for meshdiff."""

import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import ValidationError
from .utils import as_float_array, as_index_array, to_list

PathLike = Union[str, Path]

PARAMS_FORMAT = "meshdiff-params"
PARAMS_VERSION = 1


class Variant(str, Enum):
    """Edge-weight law of a Crank-Nicolson reference."""
    IRREGULAR = "irregular"
    PDE = "pde"


class ModelKind(str, Enum):
    """Learnable dynamics model."""
    OCGNN = "ocgnn"
    GCN = "gcn"
    MLP = "mlp"


class CheckStatus(str, Enum):
    """Outcome of one invariant check."""
    PASSED = "passed"
    FAILED = "failed"
    ERROR = "error"


class ArrayModel(BaseModel):
    """Base for models that carry numpy arrays."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    def _dump_json(self, payload: Dict[str, Any], path: Optional[PathLike]) -> str:
        text = json.dumps(payload, allow_nan=False)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text


class GraphSample(ArrayModel):
    """One irregular-mesh problem instance."""
    positions: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    boundary_mask: np.ndarray
    diffusivity: np.ndarray
    u0: np.ndarray
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("positions", mode="before")
    @classmethod
    def _positions(cls, v):
        return as_float_array(v, "positions", ndim=2, width=3)

    @field_validator("edges", mode="before")
    @classmethod
    def _edges(cls, v):
        return as_index_array(v, "edges", width=2)

    @field_validator("weights", "diffusivity", "u0", mode="before")
    @classmethod
    def _vectors(cls, v, info):
        return as_float_array(v, info.field_name)

    @field_validator("boundary_mask", mode="before")
    @classmethod
    def _mask(cls, v):
        return np.asarray(v).astype(bool).reshape(-1)

    @model_validator(mode="after")
    def _check_invariants(self):
        n = self.positions.shape[0]
        e = self.edges.shape[0]
        for name in ("boundary_mask", "diffusivity", "u0"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} must have length {n}")
        if self.weights.shape != (e,):
            raise ValidationError(f"weights must have length {e}")
        if not np.all(np.isfinite(self.positions)) or not np.all(np.isfinite(self.u0)):
            raise ValidationError("positions and u0 must be finite")
        if e:
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise ValidationError("edge endpoint out of range")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise ValidationError("self-loop edge (src == dst)")
            pairs = np.sort(self.edges, axis=1)
            if np.unique(pairs, axis=0).shape[0] != e:
                raise ValidationError("duplicate undirected edge")
        if not np.all(self.weights > 0) or not np.all(np.isfinite(self.weights)):
            raise ValidationError("edge weights must be finite and positive")
        if not np.all(self.diffusivity > 0) or not np.all(np.isfinite(self.diffusivity)):
            raise ValidationError("diffusivity must be finite and positive")
        return self

    @property
    def n_nodes(self) -> int:
        return int(self.positions.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    def require_interior(self) -> None:
        """Solvers and training need at least one unknown."""
        if self.n_nodes >= 2 and not np.any(self.interior_mask):
            raise ValidationError("no interior nodes: every node is on the boundary")

    def to_json(self, path: Optional[PathLike] = None) -> str:
        payload = {
            "positions": to_list(self.positions),
            "edges": to_list(self.edges),
            "weights": to_list(self.weights),
            "boundary_mask": to_list(self.boundary_mask.astype(np.int64)),
            "diffusivity": to_list(self.diffusivity),
            "u0": to_list(self.u0),
            "metadata": self.metadata,
        }
        return self._dump_json(payload, path)

    @classmethod
    def from_json(cls, source: Union[PathLike, Dict[str, Any]]) -> "GraphSample":
        data = _load_payload(source)
        required = {"positions", "edges", "weights", "boundary_mask", "diffusivity", "u0"}
        missing = required - set(data)
        if missing:
            raise ValidationError(f"graph sample is missing fields: {sorted(missing)}")
        return cls(**data)


class Trajectory(ArrayModel):
    """Time-indexed node fields, optionally with edge fields."""
    times: np.ndarray
    states: np.ndarray
    edge_states: Optional[np.ndarray] = None

    @field_validator("times", mode="before")
    @classmethod
    def _times(cls, v):
        return as_float_array(v, "times")

    @field_validator("states", mode="before")
    @classmethod
    def _states(cls, v):
        return as_float_array(v, "states", ndim=2)

    @field_validator("edge_states", mode="before")
    @classmethod
    def _edge_states(cls, v):
        return None if v is None else as_float_array(v, "edge_states", ndim=2)

    @model_validator(mode="after")
    def _check_invariants(self):
        if self.states.shape[0] != self.times.shape[0]:
            raise ValidationError("states and times must have the same length")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValidationError("times must be strictly increasing")
        if self.edge_states is not None and self.edge_states.shape[0] != self.times.shape[0]:
            raise ValidationError("edge_states and times must have the same length")
        return self

    @property
    def n_steps(self) -> int:
        return int(self.times.shape[0] - 1)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_json(self, path: Optional[PathLike] = None) -> str:
        payload: Dict[str, Any] = {"times": to_list(self.times), "states": to_list(self.states)}
        if self.edge_states is not None:
            payload["edge_states"] = to_list(self.edge_states)
        return self._dump_json(payload, path)

    @classmethod
    def from_json(cls, source: Union[PathLike, Dict[str, Any]]) -> "Trajectory":
        return cls(**_load_payload(source))


class TriangleMesh(ArrayModel):
    """Triangle surface mesh."""
    vertices: np.ndarray
    faces: np.ndarray

    @field_validator("vertices", mode="before")
    @classmethod
    def _vertices(cls, v):
        return as_float_array(v, "vertices", ndim=2, width=3)

    @field_validator("faces", mode="before")
    @classmethod
    def _faces(cls, v):
        return as_index_array(v, "faces", width=3)

    @model_validator(mode="after")
    def _check_invariants(self):
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= self.vertices.shape[0]:
                raise ValidationError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValidationError("degenerate face (repeated vertex)")
        return self

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])


class HealingParams(BaseModel):
    """Coefficients of the healing-damage-stress system."""
    D_h: float = Field(default=0.1, ge=0.0)
    eta: float = Field(default=1.0, ge=0.0)
    lam: float = Field(default=0.5, ge=0.0, description="damage inhibition of healing")
    beta: float = Field(default=1.0, ge=0.0)
    k1: float = Field(default=1.0, ge=0.0)
    k2: float = Field(default=1.0, ge=0.0)
    k3: float = Field(default=0.5, ge=0.0)
    dt: float = Field(default=0.01, gt=0.0)
    n_steps: int = Field(default=500, ge=0)
    displacement_scale: float = Field(default=0.02, ge=0.0)

    model_config = ConfigDict(extra="forbid")


class SurfaceState(ArrayModel):
    """Fields of the healing simulation at one instant."""
    positions: np.ndarray
    h: np.ndarray
    D: np.ndarray
    sigma: np.ndarray
    t: float = 0.0

    @field_validator("positions", mode="before")
    @classmethod
    def _positions(cls, v):
        return as_float_array(v, "positions", ndim=2, width=3)

    @field_validator("h", "D", "sigma", mode="before")
    @classmethod
    def _fields(cls, v, info):
        return as_float_array(v, info.field_name)

    @model_validator(mode="after")
    def _check_invariants(self):
        n = self.positions.shape[0]
        for name in ("h", "D", "sigma"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} must have length {n}")
        if np.any(self.h < 0.0) or np.any(self.h > 1.0):
            raise ValidationError("healing field must lie in [0, 1]")
        if np.any(self.D < 0.0):
            raise ValidationError("damage field must be non-negative")
        return self

    @property
    def wound_size(self) -> float:
        return float(self.D.sum())


class WoundSeries(BaseModel):
    """Total damage, and its per-node range, recorded per healing step."""
    steps: List[int] = Field(default_factory=list)
    times: List[float] = Field(default_factory=list)
    sum_damage: List[float] = Field(default_factory=list)
    min_damage: List[float] = Field(default_factory=list)
    max_damage: List[float] = Field(default_factory=list)

    def append(self, step: int, time: float, sum_damage: float, damage=None) -> None:
        self.steps.append(int(step))
        self.times.append(float(time))
        self.sum_damage.append(float(sum_damage))
        if damage is not None:
            d = np.asarray(damage, dtype=float)
            self.min_damage.append(float(d.min()) if d.size else 0.0)
            self.max_damage.append(float(d.max()) if d.size else 0.0)

    def damage_in_range(self, tol: float = 0.0) -> bool:
        """True when every recorded per-node damage lies in [0, 1]."""
        return all(v >= -tol for v in self.min_damage) and all(
            v <= 1.0 + tol for v in self.max_damage
        )

    def is_non_increasing(self, tol: float = 0.0) -> bool:
        values = self.sum_damage
        return all(b <= a + tol for a, b in zip(values, values[1:]))


class LossBreakdown(BaseModel):
    """Loss components, weights and diagnostics of one training epoch."""
    epoch: int = Field(ge=0)
    l_pde: float = Field(ge=0.0)
    l_bc: float = Field(ge=0.0)
    l_ic: float = Field(ge=0.0)
    l_pt: float = Field(default=0.0, ge=0.0)
    l_data: float = Field(default=0.0, ge=0.0)
    lambdas: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    total: float
    scale_s: float = 1.0
    f_dot_rms: float = 0.0
    lap_rms: float = 0.0
    energy_rate: float = 0.0
    energy_bound: float = 0.0
    energy_skew: float = 0.0

    @model_validator(mode="after")
    def _check_total(self):
        expected = self.weighted_sum()
        if not math.isfinite(self.total):
            raise ValidationError(f"non-finite total loss at epoch {self.epoch}")
        if abs(self.total - expected) > 1e-12 * max(1.0, abs(expected)):
            raise ValidationError(
                f"total loss {self.total!r} does not match weighted components {expected!r}"
            )
        return self

    def weighted_sum(self) -> float:
        parts = (self.l_pde, self.l_bc, self.l_ic, self.l_pt)
        return math.fsum(lam * part for lam, part in zip(self.lambdas, parts)) + self.l_data


class MetricsReport(BaseModel):
    """Errors of one model against a reference trajectory."""
    mesh: str
    model: str
    reference: str
    mae: float = Field(ge=0.0)
    mse: float = Field(ge=0.0)
    l2_norm: float = Field(ge=0.0)
    pde_residual_time: float = Field(ge=0.0)
    runtime_seconds: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _finite(self):
        for name in ("mae", "mse", "l2_norm", "pde_residual_time"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} is not finite")
        return self


class CheckResult(BaseModel):
    """Outcome of one executable invariant."""
    name: str
    status: CheckStatus
    detail: str = ""
    value: Optional[float] = None
    seconds: float = 0.0


class ModelParams(ArrayModel):
    """Learnable weights of one model plus its architecture descriptor."""
    kind: ModelKind
    architecture: Dict[str, Any] = Field(default_factory=dict)
    tensors: Dict[str, np.ndarray] = Field(default_factory=dict)

    @field_validator("tensors", mode="before")
    @classmethod
    def _tensors(cls, v):
        return {str(k): np.array(a, dtype=np.float64) for k, a in dict(v).items()}

    @model_validator(mode="after")
    def _finite(self):
        for name, arr in self.tensors.items():
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"parameter {name} is not finite")
        return self

    @property
    def names(self) -> List[str]:
        return list(self.tensors)

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self.tensors.values()))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def flatten(self) -> np.ndarray:
        if not self.tensors:
            return np.zeros(0)
        return np.concatenate([a.reshape(-1) for a in self.tensors.values()])

    def unflatten(self, vector: np.ndarray) -> "ModelParams":
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vector.size != self.size:
            raise ValidationError(f"flat vector has {vector.size} entries, expected {self.size}")
        tensors, offset = {}, 0
        for name, arr in self.tensors.items():
            tensors[name] = vector[offset:offset + arr.size].reshape(arr.shape).copy()
            offset += arr.size
        return ModelParams(kind=self.kind, architecture=dict(self.architecture), tensors=tensors)

    def copy_params(self) -> "ModelParams":
        return self.unflatten(self.flatten())

    def to_json(self, path: Optional[PathLike] = None) -> str:
        payload = {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "kind": self.kind.value,
            "architecture": self.architecture,
            "names": self.names,
            "shapes": [list(a.shape) for a in self.tensors.values()],
            "values": to_list(self.flatten()),
        }
        return self._dump_json(payload, path)

    @classmethod
    def from_json(cls, source: Union[PathLike, Dict[str, Any]]) -> "ModelParams":
        data = _load_payload(source)
        if data.get("format") != PARAMS_FORMAT:
            raise ValidationError("not a meshdiff parameter file")
        if data.get("version") != PARAMS_VERSION:
            raise ValidationError(f"unsupported parameter file version {data.get('version')}")
        values = np.asarray(data["values"], dtype=np.float64)
        tensors, offset = {}, 0
        for name, shape in zip(data["names"], data["shapes"]):
            size = int(np.prod(shape)) if shape else 1
            tensors[name] = values[offset:offset + size].reshape(shape)
            offset += size
        if offset != values.size:
            raise ValidationError("parameter file shapes do not match value count")
        return cls(kind=ModelKind(data["kind"]), architecture=data["architecture"], tensors=tensors)


def _load_payload(source: Union[PathLike, Dict[str, Any]]) -> Dict[str, Any]:
    if isinstance(source, dict):
        return dict(source)
    text = Path(source).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{source}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ValidationError(f"{source}: expected a JSON object")
    return data
