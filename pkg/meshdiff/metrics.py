"""Error metrics against reference trajectories and Hamiltonian diagnostics."""

from typing import Any, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ValidationError
from .graph import IncidenceMatrix
from .models import GraphSample, Trajectory, Variant
from .solver import diffusion_operator


def _pair(pred: Any, ref: Any):
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    r = np.asarray(ref, dtype=np.float64).reshape(-1)
    if p.shape != r.shape:
        raise ValidationError(f"length mismatch: {p.shape[0]} vs {r.shape[0]}")
    if p.size == 0:
        raise ValidationError("metrics need at least one node")
    return p, r


def mae(pred: Any, ref: Any) -> float:
    p, r = _pair(pred, ref)
    return float(np.mean(np.abs(p - r)))


def mse(pred: Any, ref: Any) -> float:
    p, r = _pair(pred, ref)
    return float(np.mean((p - r) ** 2))


def l2_norm_error(pred: Any, ref: Any) -> float:
    """||pred - ref||_2 / sqrt(N)."""
    p, r = _pair(pred, ref)
    return float(np.linalg.norm(p - r) / np.sqrt(p.size))


def error_curve(
    pred: Union[Trajectory, np.ndarray], ref: Union[Trajectory, np.ndarray]
) -> np.ndarray:
    """Normalized L2 error at every shared time step."""
    p = pred.states if isinstance(pred, Trajectory) else np.asarray(pred, dtype=np.float64)
    r = ref.states if isinstance(ref, Trajectory) else np.asarray(ref, dtype=np.float64)
    if p.shape != r.shape:
        raise ValidationError(f"trajectory shapes differ: {p.shape} vs {r.shape}")
    return np.linalg.norm(p - r, axis=1) / np.sqrt(p.shape[1])


def pde_residual_time(
    trajectory: Trajectory,
    graph: GraphSample,
    variant: Union[str, Variant] = Variant.IRREGULAR,
    include_boundary: bool = False,
) -> float:
    """
    Forward-difference residual R_k = (u_{k+1} - u_k) / dt - D L u_k, aggregated as
    sqrt(sum_k ||R_k||^2 / (n_t N)) with N the total node count.

    Clamped Dirichlet nodes contribute zero unless ``include_boundary`` is set.
    """
    states = trajectory.states
    if states.shape[0] < 2:
        raise ValidationError("pde_residual_time needs at least two states")
    if states.shape[1] != graph.n_nodes:
        raise ValidationError(f"trajectory has {states.shape[1]} nodes, graph has {graph.n_nodes}")
    steps = np.diff(trajectory.times)
    dt = float(steps[0])
    if np.max(np.abs(steps - dt)) > 1e-9 * max(1.0, abs(dt)):
        raise ValidationError("pde_residual_time needs a uniform time step")
    if include_boundary:
        rows = np.ones(graph.n_nodes, dtype=bool)
    else:
        rows = graph.interior_mask if graph.n_nodes > 1 else np.ones(graph.n_nodes, bool)
    if not rows.any():
        raise ValidationError("no interior nodes: every node is on the boundary")

    K = diffusion_operator(graph, variant).matrix
    u = states[:-1]
    residual = (states[1:] - u) / dt - (K @ u.T).T
    residual = residual[:, rows]
    n_t = residual.shape[0]
    return float(np.sqrt(np.sum(residual**2) / (n_t * graph.n_nodes)))


# --- energy ---


def hamiltonian(f: Any, g: Any) -> float:
    """H = 1/2 ||f||^2 + 1/2 ||g||^2."""
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise ValidationError("hamiltonian of non-finite fields")
    return 0.5 * float(f @ f) + 0.5 * float(g @ g)


def hamiltonian_drift(f_states: Any, g_states: Any) -> np.ndarray:
    """H(t_k) - H(t_0) along paired node and edge trajectories."""
    f_states = np.asarray(f_states, dtype=np.float64)
    g_states = np.asarray(g_states, dtype=np.float64)
    if f_states.shape[0] != g_states.shape[0]:
        raise ValidationError("node and edge trajectories have different lengths")
    energy = np.array([hamiltonian(f, g) for f, g in zip(f_states, g_states)])
    return energy - energy[0]


def skew_flow(
    B: Union[IncidenceMatrix, sp.spmatrix, np.ndarray],
    f0: Any,
    g0: Any,
    times: Sequence[float],
    sign: int = -1,
) -> Trajectory:
    """
    Exact solution of f' = B^T g, g' = sign * B f by dense eigendecomposition.

    ``sign = -1`` is the conservative skew system; ``sign = +1`` is the wrong-sign
    variant whose energy grows.
    """
    Bd = B.toarray() if isinstance(B, (IncidenceMatrix, sp.spmatrix)) else np.asarray(B, float)
    n_edges, n_nodes = Bd.shape
    f0 = np.asarray(f0, dtype=np.float64).reshape(-1)
    g0 = np.asarray(g0, dtype=np.float64).reshape(-1)
    if f0.shape != (n_nodes,) or g0.shape != (n_edges,):
        raise ValidationError("initial fields do not match the incidence shape")
    if sign not in (-1, 1):
        raise ValidationError(f"sign must be -1 or +1, got {sign}")

    M = np.zeros((n_nodes + n_edges, n_nodes + n_edges))
    M[:n_nodes, n_nodes:] = Bd.T
    M[n_nodes:, :n_nodes] = sign * Bd
    z0 = np.concatenate([f0, g0])
    times = np.asarray(times, dtype=np.float64)

    if sign == -1:
        # M is skew: i M is Hermitian and exp(tM) = V exp(-i lam t) V^H
        lam, V = scipy.linalg.eigh(1j * M)
        c = V.conj().T @ z0
        states = np.array([(V @ (np.exp(-1j * lam * t) * c)).real for t in times])
    else:
        lam, V = scipy.linalg.eigh(M)
        c = V.T @ z0
        with np.errstate(over="ignore"):
            states = np.array([V @ (np.exp(lam * t) * c) for t in times])
    return Trajectory(times=times, states=states[:, :n_nodes], edge_states=states[:, n_nodes:])


def rollout_energy(trajectory: Trajectory) -> Optional[np.ndarray]:
    """Hamiltonian drift of a rollout with edge states, else None."""
    if trajectory.edge_states is None:
        return None
    return hamiltonian_drift(trajectory.states, trajectory.edge_states)
