"""OCGNN, GCN and MLP dynamics models, time encoding, and explicit Euler rollout."""

from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import DiffValue
from .config import ModelConfig
from .errors import NumericalError, ValidationError
from .graph import (
    IncidenceMatrix,
    build_incidence,
    degree_vector,
    laplacian_generator,
    weighted_adjacency,
)
from .models import GraphSample, ModelKind, ModelParams, Trajectory

Weights = Mapping[str, Union[DiffValue, np.ndarray]]
Dynamics = Tuple[DiffValue, Optional[DiffValue]]


def encode_time(t: float, omegas) -> np.ndarray:
    """[sin(w t / (1 + w t)), cos(w t / (1 + w t))] interleaved per frequency."""
    if t < 0:
        raise ValidationError(f"time must be non-negative, got {t}")
    w = np.asarray(omegas, dtype=np.float64).reshape(-1)
    if w.size == 0 or np.any(w <= 0):
        raise ValidationError("omegas must be a non-empty list of positive frequencies")
    arg = w * t / (1.0 + w * t)
    out = np.empty(2 * w.size)
    out[0::2] = np.sin(arg)
    out[1::2] = np.cos(arg)
    return out


@dataclass(frozen=True)
class GraphContext:
    """Per-graph index arrays, geometry and operators shared by every forward pass."""

    graph: GraphSample
    src: np.ndarray
    dst: np.ndarray
    lengths: np.ndarray
    directions: np.ndarray
    diffusion: sp.csr_matrix
    incidence: IncidenceMatrix
    inv_edge_count: np.ndarray
    gcn_adjacency: sp.csr_matrix

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    @property
    def n_edges(self) -> int:
        return self.graph.n_edges

    @classmethod
    def from_graph(cls, graph: GraphSample) -> "GraphContext":
        src, dst = graph.edges[:, 0], graph.edges[:, 1]
        delta = graph.positions[src] - graph.positions[dst]
        lengths = np.linalg.norm(delta, axis=1)
        directions = np.divide(
            delta, lengths[:, None], out=np.zeros_like(delta), where=lengths[:, None] > 0
        )
        L = laplacian_generator(graph)
        counts = np.bincount(graph.edges.reshape(-1), minlength=graph.n_nodes).astype(np.float64)

        binary = weighted_adjacency(graph.n_nodes, graph.edges, np.ones(graph.n_edges))
        binary = binary + sp.identity(graph.n_nodes, format="csr")
        d_inv_sqrt = sp.diags(1.0 / np.sqrt(degree_vector(binary)))
        return cls(
            graph=graph,
            src=src,
            dst=dst,
            lengths=lengths[:, None],
            directions=directions,
            diffusion=sp.csr_matrix(sp.diags(graph.diffusivity) @ L),
            incidence=build_incidence(graph.edges, graph.n_nodes),
            inv_edge_count=(1.0 / np.maximum(counts, 1.0))[:, None],
            gcn_adjacency=sp.csr_matrix(d_inv_sqrt @ binary @ d_inv_sqrt),
        )


def as_context(graph: Union[GraphSample, GraphContext]) -> GraphContext:
    return graph if isinstance(graph, GraphContext) else GraphContext.from_graph(graph)


# --- parameters ---


def init_params(
    config: Optional[ModelConfig] = None, kind: Optional[Union[str, ModelKind]] = None
) -> ModelParams:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    cfg = config or ModelConfig()
    kind = ModelKind(kind or cfg.kind)
    rng = np.random.default_rng(cfg.seed)
    H, n_time = cfg.hidden, 2 * len(cfg.omegas)
    shapes: Dict[str, Tuple[Tuple[int, ...], int]] = {}

    if kind == ModelKind.OCGNN:
        for layer in range(cfg.layers):
            d = 1 if layer == 0 else H
            fan = 3 * d + 1 + 3 + n_time
            inputs = (("src", d), ("dst", d), ("diff", d), ("len", 1), ("dir", 3), ("time", n_time))
            for name, rows in inputs:
                shapes[f"l{layer}.ne.{name}"] = ((rows, H), fan)
            shapes[f"l{layer}.ne.b"] = ((H,), fan)
            shapes[f"l{layer}.ee.w"] = ((2 * H, H), 2 * H)
            shapes[f"l{layer}.ee.b"] = ((H,), 2 * H)
            shapes[f"l{layer}.en.w"] = ((H, H), H)
            shapes[f"l{layer}.en.b"] = ((H,), H)
        shapes["head_f.w"] = ((H, 1), H)
        shapes["head_f.b"] = ((1,), H)
        shapes["head_g.node"] = ((H, 1), H)
        shapes["head_g.edge"] = ((H, 1), H)
    else:
        d = 1 + n_time if kind == ModelKind.GCN else 4 + n_time
        for layer in range(cfg.layers):
            fan = d if layer == 0 else H
            shapes[f"l{layer}.w"] = ((fan, H), fan)
            shapes[f"l{layer}.b"] = ((H,), fan)
        shapes["head.w"] = ((H, 1), H)
        shapes["head.b"] = ((1,), H)

    tensors = {}
    for name, (shape, fan) in shapes.items():
        bound = 1.0 / np.sqrt(fan)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    if kind == ModelKind.OCGNN:
        tensors["anchor"] = np.array([cfg.anchor_init])

    architecture = {
        "hidden": H,
        "layers": cfg.layers,
        "omegas": list(cfg.omegas),
        "use_anchor": cfg.use_anchor,
        "use_time_encoding": cfg.use_time_encoding,
    }
    return ModelParams(kind=kind, architecture=architecture, tensors=tensors)


def zero_params(params: ModelParams) -> ModelParams:
    """Same architecture with every weight, bias and gain set to zero."""
    return params.unflatten(np.zeros(params.size))


def _weights(params: ModelParams, weights: Optional[Weights]) -> Dict[str, DiffValue]:
    source = params.tensors if weights is None else weights
    return {k: (v if isinstance(v, DiffValue) else ad.const(v)) for k, v in source.items()}


def _time_row(params: ModelParams, t: float) -> np.ndarray:
    omegas = params.architecture["omegas"]
    gamma = encode_time(t, omegas)
    if not params.architecture.get("use_time_encoding", True):
        gamma = np.zeros_like(gamma)
    return gamma[None, :]


def _check_field(f, n: int, what: str) -> np.ndarray:
    arr = np.asarray(f.data if isinstance(f, DiffValue) else f, dtype=np.float64).reshape(-1)
    if arr.shape != (n,):
        raise ValidationError(f"{what} has length {arr.shape[0]}, expected {n}")
    return arr


# --- forward maps ---


def ocgnn_forward(
    graph: Union[GraphSample, GraphContext],
    f,
    t: float,
    params: ModelParams,
    weights: Optional[Weights] = None,
) -> Tuple[DiffValue, DiffValue]:
    """
    Node -> edge -> edge -> node layers followed by the node and edge dynamics heads.

    Edge embeddings are averaged over both orientations of each edge, so node outputs
    do not depend on edge orientation and the edge head is odd under flips.
    """
    ctx = as_context(graph)
    if params.kind != ModelKind.OCGNN:
        raise ValidationError(f"ocgnn_forward needs OCGNN parameters, got {params.kind.value}")
    f_arr = _check_field(f, ctx.n_nodes, "node field")
    w = _weights(params, weights)
    n, src, dst = ctx.n_nodes, ctx.src, ctx.dst
    gamma = ad.const(_time_row(params, t))
    lengths = ad.const(ctx.lengths)
    directions = ad.const(ctx.directions)
    inv_count = ad.const(ctx.inv_edge_count)

    h = ad.const(f_arr[:, None])
    for layer in range(params.architecture["layers"]):
        p = f"l{layer}"
        a = h @ w[f"{p}.ne.src"]
        b = h @ w[f"{p}.ne.dst"]
        c = h @ w[f"{p}.ne.diff"]
        even = lengths @ w[f"{p}.ne.len"] + gamma @ w[f"{p}.ne.time"] + w[f"{p}.ne.b"]
        odd = directions @ w[f"{p}.ne.dir"]
        head_part, tail_part = a + c, b - c
        forward = ad.gather(head_part, src) + ad.gather(tail_part, dst) + even + odd
        backward = ad.gather(head_part, dst) + ad.gather(tail_part, src) + even - odd
        e = (ad.tanh(forward) + ad.tanh(backward)) * 0.5

        node_mean = (ad.scatter_add(e, src, n) + ad.scatter_add(e, dst, n)) * inv_count
        shared = (ad.gather(node_mean, src) + ad.gather(node_mean, dst)) * 0.5
        e = ad.tanh(ad.concat([e, shared], axis=1) @ w[f"{p}.ee.w"] + w[f"{p}.ee.b"])

        incoming = ad.scatter_add(e, src, n) + ad.scatter_add(e, dst, n)
        h = ad.tanh(incoming @ w[f"{p}.en.w"] + w[f"{p}.en.b"])

    f_dot = ad.reshape(h @ w["head_f.w"], (n,)) + w["head_f.b"]
    if params.architecture.get("use_anchor", True):
        f_dot = f_dot + w["anchor"] * ad.const(ctx.diffusion @ f_arr)

    B = ctx.incidence.matrix
    potential = ad.reshape(h @ w["head_g.node"], (n,))
    gain = ad.reshape(e @ w["head_g.edge"], (ctx.n_edges,))
    g_dot = ad.sparse_matmul(B, potential) + gain * ad.const(B @ f_arr)
    return f_dot, g_dot


def gcn_forward(
    graph: Union[GraphSample, GraphContext],
    f,
    t: float,
    params: ModelParams,
    weights: Optional[Weights] = None,
) -> DiffValue:
    """tanh(A_hat h W + b) layers on [f, gamma(t)], linear head to f_dot."""
    ctx = as_context(graph)
    if params.kind != ModelKind.GCN:
        raise ValidationError(f"gcn_forward needs GCN parameters, got {params.kind.value}")
    f_arr = _check_field(f, ctx.n_nodes, "node field")
    w = _weights(params, weights)
    gamma = np.repeat(_time_row(params, t), ctx.n_nodes, axis=0)
    h = ad.const(np.column_stack([f_arr, gamma]))
    for layer in range(params.architecture["layers"]):
        h = ad.tanh(ad.sparse_matmul(ctx.gcn_adjacency, h @ w[f"l{layer}.w"]) + w[f"l{layer}.b"])
    return ad.reshape(h @ w["head.w"], (ctx.n_nodes,)) + w["head.b"]


def mlp_forward(
    positions,
    u0,
    t: float,
    params: ModelParams,
    weights: Optional[Weights] = None,
) -> DiffValue:
    """Per-node network on [x_i, u0_i, gamma(t)]; no connectivity."""
    if params.kind != ModelKind.MLP:
        raise ValidationError(f"mlp_forward needs MLP parameters, got {params.kind.value}")
    x = np.asarray(positions, dtype=np.float64)
    n = x.shape[0]
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValidationError(f"positions must have shape (N, 3), got {x.shape}")
    u = _check_field(u0, n, "u0")
    w = _weights(params, weights)
    gamma = np.repeat(_time_row(params, t), n, axis=0)
    h = ad.const(np.column_stack([x, u, gamma]))
    for layer in range(params.architecture["layers"]):
        h = ad.tanh(h @ w[f"l{layer}.w"] + w[f"l{layer}.b"])
    return ad.reshape(h @ w["head.w"], (n,)) + w["head.b"]


def model_forward(
    ctx: GraphContext, f, t: float, params: ModelParams, weights: Optional[Weights] = None
) -> Dynamics:
    """(f_dot, g_dot) for any model kind; g_dot is None without an edge head."""
    if params.kind == ModelKind.OCGNN:
        return ocgnn_forward(ctx, f, t, params, weights)
    if params.kind == ModelKind.GCN:
        return gcn_forward(ctx, f, t, params, weights), None
    return mlp_forward(ctx.graph.positions, ctx.graph.u0, t, params, weights), None


ModelFn = Callable[[GraphContext, np.ndarray, float, ModelParams], Dynamics]


def euler_rollout(
    graph: Union[GraphSample, GraphContext],
    params: ModelParams,
    T: float,
    n_t: int,
    model: Optional[ModelFn] = None,
    boundary_value: float = 0.0,
) -> Trajectory:
    """
    f <- f + dt f_dot from f_0 = u0, boundary reset after every step.

    With an edge head, g starts at B u0 and advances in lockstep; the edge states are
    returned on the trajectory.
    """
    if n_t < 1:
        raise ValidationError(f"n_t must be at least 1, got {n_t}")
    if T <= 0:
        raise ValidationError(f"T must be positive, got {T}")
    ctx = as_context(graph)
    step_fn = model or model_forward
    dt = T / n_t
    mask = ctx.graph.boundary_mask

    f = ctx.graph.u0.astype(np.float64).copy()
    f[mask] = boundary_value
    g = ctx.incidence.grad(ctx.graph.u0)
    states, edge_states = [f.copy()], [g.copy()]
    has_edges = False
    for k in range(n_t):
        f_dot, g_dot = step_fn(ctx, f, k * dt, params)
        f = f + dt * np.asarray(f_dot.data if isinstance(f_dot, DiffValue) else f_dot)
        f[mask] = boundary_value
        if g_dot is not None:
            has_edges = True
            g = g + dt * np.asarray(g_dot.data if isinstance(g_dot, DiffValue) else g_dot)
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(g)):
            raise NumericalError(f"rollout diverged at step {k + 1}")
        states.append(f.copy())
        edge_states.append(g.copy())
    return Trajectory(
        times=np.linspace(0.0, T, n_t + 1),
        states=np.asarray(states),
        edge_states=np.asarray(edge_states) if has_edges else None,
    )
