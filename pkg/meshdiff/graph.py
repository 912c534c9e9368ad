"""Graph construction, incidence and Laplacian operators, and relabelling utilities."""

import warnings
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import ValidationError
from .models import GraphSample, Variant
from .utils import EPSILON, as_float_array, as_index_array, check_permutation

WEIGHT_LAWS = ("inverse", "inverse_square")

# Extra neighbours queried beyond k so that distance ties at the cut are visible.
_KNN_PAD = 8


def build_knn_graph(positions: Any, k: int) -> np.ndarray:
    """
    Symmetrized k-nearest-neighbour edge set.

    An undirected edge {i, j} exists iff j is among the k nearest neighbours of i or
    vice versa. Ties are broken by the lower node index. Edges are returned as an
    (E, 2) int array with src < dst, sorted lexicographically.
    """
    x = as_float_array(positions, "positions", ndim=2)
    n = x.shape[0]
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    if n <= k:
        raise ValidationError(f"insufficient nodes: kNN with k={k} needs at least {k + 1}, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("positions must be finite")

    tree = cKDTree(x)
    n_query = min(n, k + 1 + _KNN_PAD)
    dist, idx = tree.query(x, k=n_query)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)

    rows = []
    for i in range(n):
        d_row, j_row = dist[i], idx[i]
        keep = j_row != i
        d_row, j_row = d_row[keep], j_row[keep]
        order = np.lexsort((j_row, d_row))
        d_row, j_row = d_row[order], j_row[order]
        if n_query < n and d_row[k - 1] == d_row[-1]:
            # the tie at the cut may continue past the queried neighbours
            d_all = np.linalg.norm(x - x[i], axis=1)
            j_all = np.delete(np.arange(n), i)
            d_all = np.delete(d_all, i)
            order = np.lexsort((j_all, d_all))
            j_row = j_all[order]
        rows.append(np.column_stack([np.full(k, i), j_row[:k]]))

    pairs = np.sort(np.vstack(rows), axis=1)
    edges = np.unique(pairs, axis=0).astype(np.int64)

    n_comp = count_components(n, edges)
    if n_comp > 1:
        warnings.warn(f"kNN graph (k={k}) has {n_comp} connected components", stacklevel=2)
    return edges


def count_components(n_nodes: int, edges: Any) -> int:
    """Number of connected components of the undirected graph."""
    e = as_index_array(edges, "edges", width=2)
    adj = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n_nodes, n_nodes))
    n_comp, _ = connected_components(adj, directed=False)
    return int(n_comp)


def edge_lengths(positions: Any, edges: Any) -> np.ndarray:
    """Euclidean length of every edge."""
    x = as_float_array(positions, "positions", ndim=2)
    e = _checked_edges(edges, x.shape[0])
    return np.linalg.norm(x[e[:, 0]] - x[e[:, 1]], axis=1)


def edge_weights_inverse_distance(
    positions: Any, edges: Any, epsilon: float = EPSILON
) -> np.ndarray:
    """w_e = 1 / (|x_src - x_dst| + epsilon)."""
    return edge_weights(positions, edges, law="inverse", epsilon=epsilon)


def edge_weights(
    positions: Any, edges: Any, law: str = "inverse", epsilon: float = EPSILON
) -> np.ndarray:
    """Edge weights under the 1/d (``inverse``) or 1/d^2 (``inverse_square``) law."""
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    d = edge_lengths(positions, edges) + epsilon
    if law == "inverse":
        return 1.0 / d
    if law == "inverse_square":
        return 1.0 / (d * d)
    raise ValidationError(f"unknown weight law {law!r}; expected one of {WEIGHT_LAWS}")


def variant_weight_law(variant: Union[str, Variant]) -> str:
    return "inverse" if Variant(variant) == Variant.IRREGULAR else "inverse_square"


def weighted_adjacency(n_nodes: int, edges: Any, weights: Any) -> sp.csr_matrix:
    """Symmetric weighted adjacency matrix in canonical CSR form."""
    e = _checked_edges(edges, n_nodes)
    w = as_float_array(weights, "weights")
    if w.shape != (len(e),):
        raise ValidationError(f"weights must have length {len(e)}")
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    vals = np.concatenate([w, w])
    return _canonical(sp.coo_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes)))


def degree_vector(adjacency: sp.spmatrix) -> np.ndarray:
    return np.asarray(adjacency.sum(axis=1)).reshape(-1)


def generator_from_edges(n_nodes: int, edges: Any, weights: Any) -> sp.csr_matrix:
    """Generator-convention Laplacian D^-1 (A - D) of a weighted edge list."""
    adj = weighted_adjacency(n_nodes, edges, weights)
    deg = degree_vector(adj)
    isolated = np.flatnonzero(deg <= 0)
    if isolated.size:
        raise ValidationError(f"zero degree at node {int(isolated[0])} (isolated node)")
    lap = sp.diags(1.0 / deg) @ adj - sp.identity(n_nodes, format="csr")
    return _canonical(lap)


def laplacian_generator(graph: GraphSample) -> sp.csr_matrix:
    """L = D^-1 (A - D) from the sample's stored edge weights."""
    return generator_from_edges(graph.n_nodes, graph.edges, graph.weights)


def laplacian_cn(
    graph: GraphSample, variant: Union[str, Variant] = Variant.IRREGULAR, epsilon: float = EPSILON
) -> sp.csr_matrix:
    """PSD Laplacian D_w - A_w with weights recomputed from positions by the variant's law."""
    w = edge_weights(graph.positions, graph.edges, variant_weight_law(variant), epsilon)
    adj = weighted_adjacency(graph.n_nodes, graph.edges, w)
    return _canonical(sp.diags(degree_vector(adj)) - adj)


def combinatorial_laplacian(n_nodes: int, edges: Any) -> sp.csr_matrix:
    """Unweighted degree-minus-adjacency Laplacian."""
    e = _checked_edges(edges, n_nodes)
    adj = weighted_adjacency(n_nodes, e, np.ones(len(e)))
    return _canonical(sp.diags(degree_vector(adj)) - adj)


@dataclass(frozen=True)
class IncidenceMatrix:
    """Signed E x N edge-by-node incidence: +1 at src(e), -1 at dst(e)."""

    matrix: sp.csr_matrix
    edges: np.ndarray
    n_nodes: int

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def T(self) -> sp.csr_matrix:
        return self.matrix.T.tocsr()

    def grad(self, f: np.ndarray) -> np.ndarray:
        """(Bf)[e] = f(src) - f(dst)."""
        return self.matrix @ f

    def div(self, g: np.ndarray) -> np.ndarray:
        """(B^T g)[v] = outflow - inflow."""
        return self.matrix.T @ g

    def hand_divergence(self, g: np.ndarray) -> np.ndarray:
        """Inflow minus outflow per node, summed edge by edge."""
        g = np.asarray(g, dtype=np.float64)
        out = np.zeros(self.n_nodes)
        for (src, dst), value in zip(self.edges, g):
            out[dst] += value
            out[src] -= value
        return out

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def build_incidence(edges: Any, n_nodes: int) -> IncidenceMatrix:
    """Incidence matrix of an oriented edge list."""
    e = _checked_edges(edges, n_nodes)
    n_edges = len(e)
    rows = np.repeat(np.arange(n_edges), 2)
    cols = e.reshape(-1)
    vals = np.tile([1.0, -1.0], n_edges)
    mat = _canonical(sp.coo_matrix((vals, (rows, cols)), shape=(n_edges, n_nodes)))
    return IncidenceMatrix(matrix=mat, edges=e.copy(), n_nodes=int(n_nodes))


def node_laplacian_from_incidence(B: Union[IncidenceMatrix, sp.spmatrix]) -> sp.csr_matrix:
    """L_V = B^T B."""
    m = _incidence_matrix(B)
    return _canonical(m.T @ m)


def edge_laplacian_from_incidence(B: Union[IncidenceMatrix, sp.spmatrix]) -> sp.csr_matrix:
    """L_E = B B^T."""
    m = _incidence_matrix(B)
    return _canonical(m @ m.T)


# --- relabelling ---


def node_permutation_matrix(perm: Sequence[int]) -> sp.csr_matrix:
    """P with P[perm[i], i] = 1, so (P f)[perm[i]] = f[i]."""
    p = check_permutation(perm, len(perm))
    n = len(p)
    return _canonical(sp.coo_matrix((np.ones(n), (p, np.arange(n))), shape=(n, n)))


def induced_edge_permutation(
    edges: Any, perm: Sequence[int]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Signed edge permutation induced by relabelling nodes ``i -> perm[i]``.

    Returns ``(new_edges, edge_perm, signs)``: the canonical (src < dst, sorted) edge list
    of the relabelled graph, the new position of every old edge, and -1 where the
    canonical orientation of an edge flipped.
    """
    e = as_index_array(edges, "edges", width=2)
    p = check_permutation(perm, len(perm))
    if e.size and e.max() >= len(p):
        raise ValidationError("edge endpoint out of range of the permutation")
    mapped = p[e]
    signs = np.where(mapped[:, 0] < mapped[:, 1], 1.0, -1.0)
    canon = np.sort(mapped, axis=1)
    order = np.lexsort((canon[:, 1], canon[:, 0]))
    edge_perm = np.empty(len(e), dtype=np.int64)
    edge_perm[order] = np.arange(len(e))
    return canon[order], edge_perm, signs


def edge_permutation_matrix(edge_perm: Sequence[int], signs: Sequence[float]) -> sp.csr_matrix:
    """Q with Q[edge_perm[e], e] = signs[e]."""
    q = check_permutation(edge_perm, len(edge_perm))
    s = _checked_signs(signs, len(q))
    n = len(q)
    return _canonical(sp.coo_matrix((s, (q, np.arange(n))), shape=(n, n)))


def apply_node_permutation(
    target: Union[GraphSample, np.ndarray], perm: Sequence[int]
) -> Union[GraphSample, np.ndarray]:
    """
    Relabel nodes ``i -> perm[i]``.

    Node fields (1-D or row-indexed 2-D arrays) are moved so that ``out[perm[i]] = f[i]``.
    A GraphSample gets relabelled node data and its canonical relabelled edge list, with
    edge weights carried along.
    """
    if isinstance(target, GraphSample):
        p = check_permutation(perm, target.n_nodes)
        new_edges, edge_perm, _ = induced_edge_permutation(target.edges, p)
        weights = np.empty_like(target.weights)
        weights[edge_perm] = target.weights
        return GraphSample(
            positions=_move_rows(target.positions, p),
            edges=new_edges,
            weights=weights,
            boundary_mask=_move_rows(target.boundary_mask, p),
            diffusivity=_move_rows(target.diffusivity, p),
            u0=_move_rows(target.u0, p),
            metadata=dict(target.metadata),
        )
    arr = np.asarray(target)
    return _move_rows(arr, check_permutation(perm, arr.shape[0]))


def apply_edge_signed_permutation(
    g: Any,
    B: IncidenceMatrix,
    edge_perm: Sequence[int],
    flips: Sequence[float],
    node_perm: Optional[Sequence[int]] = None,
) -> Tuple[np.ndarray, IncidenceMatrix]:
    """
    Transport an edge field and its incidence matrix through a signed edge permutation.

    Returns ``(Q g, Q B P^T)`` where ``Q[edge_perm[e], e] = flips[e]`` and ``P`` relabels
    nodes by ``node_perm`` (identity when omitted). With the identity edge permutation
    this is the orientation flip ``(S B, S g)``.
    """
    q = check_permutation(edge_perm, B.n_edges)
    s = _checked_signs(flips, B.n_edges)
    p = np.arange(B.n_nodes) if node_perm is None else check_permutation(node_perm, B.n_nodes)
    g = np.asarray(g, dtype=np.float64)
    if g.shape[0] != B.n_edges:
        raise ValidationError(f"edge field has {g.shape[0]} rows, incidence has {B.n_edges} edges")

    g_new = np.empty_like(g)
    g_new[q] = g * (s if g.ndim == 1 else s[:, None])

    relabelled = p[B.edges]
    oriented = np.where(s[:, None] > 0, relabelled, relabelled[:, ::-1])
    new_edges = np.empty_like(oriented)
    new_edges[q] = oriented
    return g_new, build_incidence(new_edges, B.n_nodes)


def make_graph_sample(
    positions: Any,
    edges: Any,
    boundary_mask: Any,
    diffusivity: Any,
    u0: Any,
    metadata: Optional[Dict[str, Any]] = None,
    law: str = "inverse",
    epsilon: float = EPSILON,
) -> GraphSample:
    """Pack a GraphSample, computing edge weights from positions."""
    return GraphSample(
        positions=positions,
        edges=edges,
        weights=edge_weights(positions, edges, law=law, epsilon=epsilon),
        boundary_mask=boundary_mask,
        diffusivity=diffusivity,
        u0=u0,
        metadata=metadata or {},
    )


def _move_rows(arr: np.ndarray, perm: np.ndarray) -> np.ndarray:
    out = np.empty_like(arr)
    out[perm] = arr
    return out


def _checked_edges(edges: Any, n_nodes: int) -> np.ndarray:
    e = as_index_array(edges, "edges", width=2)
    if e.size and (e.min() < 0 or e.max() >= n_nodes):
        raise ValidationError(f"edge endpoint out of range for {n_nodes} nodes")
    return e


def _checked_signs(signs: Sequence[float], n: int) -> np.ndarray:
    s = np.asarray(signs, dtype=np.float64).reshape(-1)
    if s.shape != (n,) or not np.all(np.abs(s) == 1.0):
        raise ValidationError("flips must be a +1/-1 sign per edge")
    return s


def _incidence_matrix(B: Union[IncidenceMatrix, sp.spmatrix]) -> sp.csr_matrix:
    return B.matrix if isinstance(B, IncidenceMatrix) else sp.csr_matrix(B)


def _canonical(mat: sp.spmatrix) -> sp.csr_matrix:
    out = sp.csr_matrix(mat)
    out.sum_duplicates()
    out.sort_indices()
    return out
