"""Triangle mesh ingestion (ASCII OBJ / PLY) and conversion to graph samples."""

import warnings
from pathlib import Path
from typing import IO, Any, Iterable, List, Optional, Tuple, Union

import numpy as np

from .errors import ParseError, ValidationError
from .graph import build_knn_graph, make_graph_sample
from .models import GraphSample, TriangleMesh
from .utils import EPSILON, as_float_array, make_rng

MESH_FORMATS = ("obj", "ply")

Source = Union[str, Path, bytes, IO]


def parse_mesh(source: Source, format: Optional[str] = None) -> TriangleMesh:
    """
    Read an OBJ or ASCII PLY triangle mesh.

    ``source`` may be a path, raw bytes or an open text/binary stream. The format is
    taken from the file suffix when not given. Polygons are fan-triangulated.
    """
    fmt = _resolve_format(source, format)
    lines = _read_lines(source)
    if fmt == "obj":
        vertices, faces = _parse_obj(lines)
    else:
        vertices, faces = _parse_ply(lines)
    return TriangleMesh(vertices=vertices, faces=_drop_degenerate(faces))


def write_mesh(mesh: TriangleMesh, path: Union[str, Path], format: Optional[str] = None) -> None:
    """Write ASCII OBJ or PLY; coordinates use the shortest round-trip repr."""
    fmt = _resolve_format(path, format)
    out: List[str] = []
    if fmt == "obj":
        out += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    else:
        out += [
            "ply",
            "format ascii 1.0",
            f"element vertex {mesh.n_vertices}",
            "property double x",
            "property double y",
            "property double z",
            f"element face {len(mesh.faces)}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
        out += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        out += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def _resolve_format(source: Any, format: Optional[str]) -> str:
    if format is None and isinstance(source, (str, Path)):
        format = Path(source).suffix.lstrip(".")
    fmt = (format or "").lower()
    if fmt not in MESH_FORMATS:
        raise ValidationError(f"unknown mesh format {format!r}; expected one of {MESH_FORMATS}")
    return fmt


def _read_lines(source: Source) -> List[str]:
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    elif isinstance(source, bytes):
        data = source
    else:
        data = source.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError("mesh is not ASCII text (binary formats are not supported)") from e
    return data.splitlines()


def _parse_obj(lines: List[str]) -> Tuple[np.ndarray, List[Tuple[int, int, int, int]]]:
    vertices: List[List[float]] = []
    polygons: List[Tuple[int, List[int]]] = []
    for lineno, raw in enumerate(lines, start=1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        if toks[0] == "v":
            if len(toks) < 4:
                raise ParseError("vertex record needs three coordinates", lineno)
            vertices.append([_float(t, lineno) for t in toks[1:4]])
        elif toks[0] == "f":
            if len(toks) < 4:
                raise ParseError("face record needs at least three vertices", lineno)
            corners = []
            for tok in toks[1:]:
                ref = tok.partition("/")[0]
                idx = _int(ref, lineno)
                # 1-based, negatives count back from the latest vertex
                idx = idx - 1 if idx > 0 else len(vertices) + idx
                if not 0 <= idx < len(vertices):
                    raise ParseError("index out of range", lineno)
                corners.append(idx)
            polygons.append((lineno, corners))
    return np.asarray(vertices, dtype=np.float64).reshape(-1, 3), _fan(polygons)


def _parse_ply(lines: List[str]) -> Tuple[np.ndarray, List[Tuple[int, int, int, int]]]:
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)
    elements: List[Tuple[str, int, List[str]]] = []
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        toks = raw.split()
        if not toks or toks[0] in ("comment", "obj_info"):
            continue
        if toks[0] == "format":
            if len(toks) < 2 or toks[1] != "ascii":
                raise ParseError(f"unsupported PLY format {' '.join(toks[1:2])!r}", lineno)
        elif toks[0] == "element":
            if len(toks) != 3:
                raise ParseError("malformed element declaration", lineno)
            elements.append((toks[1], _int(toks[2], lineno), []))
        elif toks[0] == "property":
            if not elements:
                raise ParseError("property before any element", lineno)
            elements[-1][2].append(toks[-1])
        elif toks[0] == "end_header":
            body_start = lineno
            break
        else:
            raise ParseError(f"unexpected header keyword {toks[0]!r}", lineno)
    if body_start is None:
        raise ParseError("missing end_header", len(lines))

    vertices: List[List[float]] = []
    polygons: List[Tuple[int, List[int]]] = []
    cursor = body_start
    for name, count, props in elements:
        for _ in range(count):
            if cursor >= len(lines):
                raise ParseError(f"unexpected end of file in element {name!r}", cursor)
            lineno = cursor + 1
            toks = lines[cursor].split()
            cursor += 1
            if name == "vertex":
                try:
                    cols = [props.index(axis) for axis in ("x", "y", "z")]
                except ValueError:
                    raise ParseError("vertex element lacks x/y/z properties", lineno) from None
                if len(toks) < len(props):
                    raise ParseError("vertex record shorter than declared", lineno)
                vertices.append([_float(toks[c], lineno) for c in cols])
            elif name == "face":
                if not toks:
                    raise ParseError("empty face record", lineno)
                n = _int(toks[0], lineno)
                if n < 3 or len(toks) < n + 1:
                    raise ParseError("face record shorter than declared", lineno)
                corners = [_int(t, lineno) for t in toks[1:n + 1]]
                if any(not 0 <= c < len(vertices) for c in corners):
                    raise ParseError("index out of range", lineno)
                polygons.append((lineno, corners))
    return np.asarray(vertices, dtype=np.float64).reshape(-1, 3), _fan(polygons)


def _fan(polygons: Iterable[Tuple[int, List[int]]]) -> List[Tuple[int, int, int, int]]:
    """(lineno, a, b, c) triangles: polygon (v0, v1, ..., vn) -> (v0, vi, vi+1)."""
    tris = []
    for lineno, corners in polygons:
        for i in range(1, len(corners) - 1):
            tris.append((lineno, corners[0], corners[i], corners[i + 1]))
    return tris


def _drop_degenerate(tris: List[Tuple[int, int, int, int]]) -> np.ndarray:
    kept = []
    for lineno, a, b, c in tris:
        if a == b or b == c or a == c:
            warnings.warn(f"dropping degenerate triangle at line {lineno}", stacklevel=3)
            continue
        kept.append((a, b, c))
    return np.asarray(kept, dtype=np.int64).reshape(-1, 3)


def _float(tok: str, lineno: int) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise ParseError(f"non-numeric coordinate {tok!r}", lineno) from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite coordinate {tok!r}", lineno)
    return value


def _int(tok: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"non-integer index {tok!r}", lineno) from None


# --- conversion pipeline ---


def recenter_and_rotate(mesh: TriangleMesh, rotation: Any = None) -> TriangleMesh:
    """Subtract the vertex mean, then apply an orthogonal rotation."""
    R = np.eye(3) if rotation is None else as_float_array(rotation, "rotation", ndim=2, width=3)
    if R.shape != (3, 3):
        raise ValidationError("rotation must be a 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-8:
        raise ValidationError("rotation is not orthogonal within 1e-8")
    centered = mesh.vertices - mesh.vertices.mean(axis=0)
    return TriangleMesh(vertices=centered @ R.T, faces=mesh.faces)


def subsample_vertices(mesh: TriangleMesh, n: int, seed: Optional[int] = None) -> np.ndarray:
    """n distinct vertex indices drawn uniformly without replacement, sorted."""
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    if n > mesh.n_vertices:
        raise ValidationError(
            f"cannot select {n} of {mesh.n_vertices} vertices without replacement"
        )
    return np.sort(make_rng(seed).choice(mesh.n_vertices, size=n, replace=False))


def boundary_edges(mesh: TriangleMesh) -> np.ndarray:
    """Undirected edges incident to exactly one face."""
    if not mesh.faces.size:
        return np.zeros((0, 2), dtype=np.int64)
    f = mesh.faces
    pairs = np.sort(np.vstack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    unique, counts = np.unique(pairs, axis=0, return_counts=True)
    return unique[counts == 1]


def detect_boundary_vertices(mesh: TriangleMesh) -> np.ndarray:
    """Mask of vertices lying on at least one single-face edge."""
    mask = np.zeros(mesh.n_vertices, dtype=bool)
    mask[boundary_edges(mesh).reshape(-1)] = True
    return mask


def gaussian_initial_condition(positions: Any) -> np.ndarray:
    """u0 = exp(-20 |x - mean|^2 / max |x - mean|^2)."""
    x = as_float_array(positions, "positions", ndim=2)
    r2 = np.sum((x - x.mean(axis=0)) ** 2, axis=1)
    r2_max = r2.max() if r2.size else 0.0
    if r2_max <= 0.0:
        raise ValidationError("degenerate geometry: all points coincide")
    return np.exp(-20.0 * r2 / r2_max)


def realmesh_to_graphsample(
    mesh: TriangleMesh,
    n: int,
    k: int = 10,
    seed: Optional[int] = None,
    rotation: Any = None,
    epsilon: float = EPSILON,
    diffusivity: float = 0.05,
    name: str = "mesh",
) -> GraphSample:
    """
    Real mesh to graph sample: recenter, subsample, kNN graph with inverse-distance
    weights, boundary from single-face edges, Gaussian initial condition.
    """
    centered = recenter_and_rotate(mesh, rotation)
    idx = subsample_vertices(centered, n, seed)
    positions = centered.vertices[idx]
    edges = build_knn_graph(positions, k)
    boundary = detect_boundary_vertices(centered)[idx]
    return make_graph_sample(
        positions=positions,
        edges=edges,
        boundary_mask=boundary,
        diffusivity=np.full(n, diffusivity),
        u0=gaussian_initial_condition(positions),
        metadata={"source": name, "n": n, "k": k, "seed": seed},
        epsilon=epsilon,
    )
