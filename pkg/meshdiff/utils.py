"""Utility functions for meshdiff."""

import hashlib
import json
from typing import Any, Iterable, Optional

import numpy as np

from .errors import ValidationError

# Guard added to every inverted distance.
EPSILON = 1e-6


def make_rng(seed: Optional[int]) -> np.random.Generator:
    """Seeded PCG64 generator; ``None`` draws fresh entropy."""
    return np.random.default_rng(seed)


def as_float_array(
    values: Any, name: str, ndim: int = 1, width: Optional[int] = None
) -> np.ndarray:
    """Coerce ``values`` to a float64 array with the given rank (and column count)."""
    arr = np.asarray(values, dtype=np.float64)
    if ndim == 2 and arr.size == 0:
        arr = arr.reshape(0, width or 0)
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if width is not None and arr.shape[1] != width:
        raise ValidationError(f"{name} must have {width} columns, got shape {arr.shape}")
    return arr


def as_index_array(values: Any, name: str, width: Optional[int] = None) -> np.ndarray:
    """Coerce ``values`` to an int64 array; ``width`` makes it ``(-1, width)``."""
    arr = np.asarray(values)
    if arr.size == 0:
        arr = arr.reshape(0, width) if width else arr.reshape(0)
    if arr.dtype.kind == "f":
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValidationError(f"{name} must contain integers")
    arr = arr.astype(np.int64)
    if width is not None and (arr.ndim != 2 or arr.shape[1] != width):
        raise ValidationError(f"{name} must have shape (n, {width}), got {arr.shape}")
    return arr


def check_permutation(perm: Iterable[int], n: int) -> np.ndarray:
    """Return ``perm`` as an int array, raising unless it is a bijection on range(n)."""
    arr = np.asarray(list(perm) if not isinstance(perm, np.ndarray) else perm, dtype=np.int64)
    if arr.shape != (n,) or not np.array_equal(np.sort(arr), np.arange(n)):
        raise ValidationError(f"permutation is not a bijection on {n} elements")
    return arr


def stable_digest(*parts: Any) -> str:
    """SHA-256 digest of JSON-serializable parts; numpy arrays hashed by bytes."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(str(part.dtype).encode())
            h.update(str(part.shape).encode())
            h.update(np.ascontiguousarray(part).tobytes())
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode())
        h.update(b"|")
    return h.hexdigest()


def to_list(arr: np.ndarray) -> list:
    """Nested Python list with native floats (repr round-trips doubles exactly)."""
    return np.asarray(arr).tolist()


def format_float(value: float) -> str:
    """Shortest round-trip repr of a float for CSV output."""
    return repr(float(value))
