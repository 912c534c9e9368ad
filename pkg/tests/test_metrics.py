"""Tests for error metrics, the PDE residual and Hamiltonian diagnostics."""

import numpy as np
import pytest

from meshdiff.errors import ValidationError
from meshdiff.graph import apply_edge_signed_permutation, build_incidence
from meshdiff.metrics import (
    error_curve,
    hamiltonian,
    hamiltonian_drift,
    l2_norm_error,
    mae,
    mse,
    pde_residual_time,
    rollout_energy,
    skew_flow,
)
from meshdiff.models import Trajectory
from meshdiff.solver import diffusion_operator
from meshdiff.verify import random_sample

# --- pointwise errors ---


def test_identical_fields_have_zero_error():
    x = [0.3, -1.0, 2.0]
    assert mae(x, x) == mse(x, x) == l2_norm_error(x, x) == 0.0


def test_hand_values():
    assert mae([1.0, 0.0], [0.0, 0.0]) == pytest.approx(0.5)
    assert mse([1.0, 0.0], [0.0, 0.0]) == pytest.approx(0.5)
    assert l2_norm_error([1.0, 0.0], [0.0, 0.0]) == pytest.approx(0.70711, abs=1e-5)


def test_constant_offset():
    ref = np.linspace(0.0, 1.0, 7)
    pred = ref - 0.3
    assert mae(pred, ref) == pytest.approx(0.3)
    assert mse(pred, ref) == pytest.approx(0.09)
    assert l2_norm_error(pred, ref) == pytest.approx(0.3)


def test_metrics_are_symmetric(rng):
    a, b = rng.normal(size=(2, 12))
    for metric in (mae, mse, l2_norm_error):
        assert metric(a, b) == metric(b, a)


def test_length_mismatch():
    with pytest.raises(ValidationError, match="length mismatch"):
        mae([1.0, 2.0], [1.0])


def test_error_curve():
    ref = Trajectory(times=[0.0, 1.0], states=[[0.0, 0.0], [0.0, 0.0]])
    pred = Trajectory(times=[0.0, 1.0], states=[[0.0, 0.0], [1.0, 0.0]])
    assert error_curve(pred, ref) == pytest.approx([0.0, 0.70711], abs=1e-5)


def test_error_curve_shape_mismatch():
    with pytest.raises(ValidationError):
        error_curve(np.zeros((3, 2)), np.zeros((2, 2)))


# --- PDE residual ---


def test_forward_euler_has_zero_residual(path_graph):
    K = diffusion_operator(path_graph).matrix
    dt, states = 0.01, [path_graph.u0]
    for _ in range(10):
        states.append(states[-1] + dt * (K @ states[-1]))
    traj = Trajectory(times=np.arange(11) * dt, states=states)
    assert pde_residual_time(traj, path_graph) < 1e-12


def test_frozen_two_node_residual(two_node_graph):
    traj = Trajectory(times=[0.0, 0.5, 1.0], states=[[1.0, 0.0]] * 3)
    assert pde_residual_time(traj, two_node_graph) == pytest.approx(1.0)


def test_residual_skips_clamped_nodes_but_counts_them(two_node_graph):
    """Boundary rows are dropped from the sum; the normalization keeps every node."""
    graph = two_node_graph.model_copy(update={"boundary_mask": np.array([True, False])})
    traj = Trajectory(times=[0.0, 0.5, 1.0], states=[[1.0, 0.0]] * 3)
    assert pde_residual_time(traj, graph) == pytest.approx(np.sqrt(0.5))
    assert pde_residual_time(traj, graph, include_boundary=True) == pytest.approx(1.0)


def test_residual_needs_two_states(two_node_graph):
    traj = Trajectory(times=[0.0], states=[[1.0, 0.0]])
    with pytest.raises(ValidationError, match="at least two states"):
        pde_residual_time(traj, two_node_graph)


def test_residual_node_count_mismatch(path_graph):
    traj = Trajectory(times=[0.0, 1.0], states=[[1.0, 0.0]] * 2)
    with pytest.raises(ValidationError):
        pde_residual_time(traj, path_graph)


# --- Hamiltonian ---


def test_hamiltonian_hand_value():
    assert hamiltonian([1.0, 0.0], [0.0]) == 0.5


def test_hamiltonian_is_permutation_invariant(rng):
    f, g = rng.normal(size=5), rng.normal(size=4)
    assert hamiltonian(f[::-1], -g[[2, 0, 3, 1]]) == pytest.approx(hamiltonian(f, g))


def test_drift_series():
    drift = hamiltonian_drift([[1.0, 0.0], [2.0, 0.0]], [[0.0], [1.0]])
    assert drift.tolist() == [0.0, 2.0]


def test_skew_flow_single_edge_conserves_energy():
    B = build_incidence([[0, 1]], 2)
    traj = skew_flow(B, [1.0, 0.0], [0.0], np.linspace(0.0, 100.0, 201))
    drift = hamiltonian_drift(traj.states, traj.edge_states)
    assert np.max(np.abs(drift)) < 1e-10


@pytest.mark.parametrize("seed", range(4))
def test_skew_flow_conserves_energy(seed):
    graph = random_sample(8, seed=seed)
    B = build_incidence(graph.edges, graph.n_nodes)
    rng = np.random.default_rng(seed)
    traj = skew_flow(B, rng.normal(size=8), rng.normal(size=graph.n_edges), np.linspace(0, 100, 51))
    assert np.max(np.abs(rollout_energy(traj))) < 1e-10


def test_skew_flow_solves_the_system():
    """Finite differences of the exact flow match f' = B^T g and g' = -B f."""
    graph = random_sample(6, seed=5)
    B = build_incidence(graph.edges, graph.n_nodes)
    h = 1e-5
    traj = skew_flow(B, graph.u0, np.zeros(graph.n_edges), [1.0 - h, 1.0, 1.0 + h])
    f_dot = (traj.states[2] - traj.states[0]) / (2 * h)
    g_dot = (traj.edge_states[2] - traj.edge_states[0]) / (2 * h)
    assert np.allclose(f_dot, B.div(traj.edge_states[1]), atol=1e-6)
    assert np.allclose(g_dot, -B.grad(traj.states[1]), atol=1e-6)


def test_wrong_sign_flow_gains_energy():
    graph = random_sample(8, seed=1)
    B = build_incidence(graph.edges, graph.n_nodes)
    traj = skew_flow(B, graph.u0, np.zeros(graph.n_edges), np.linspace(0.0, 1.0, 11), sign=1)
    assert np.max(np.abs(rollout_energy(traj))) > 1e-3


def test_skew_flow_is_orientation_equivariant(rng):
    graph = random_sample(7, seed=2)
    B = build_incidence(graph.edges, graph.n_nodes)
    flips = rng.choice([-1.0, 1.0], size=graph.n_edges)
    g0 = rng.normal(size=graph.n_edges)
    identity = np.arange(graph.n_edges)
    g0_s, B_s = apply_edge_signed_permutation(g0, B, identity, flips)
    a = skew_flow(B, graph.u0, g0, [0.0, 2.0])
    b = skew_flow(B_s, graph.u0, g0_s, [0.0, 2.0])
    assert np.allclose(b.states, a.states, atol=1e-10)
    assert np.allclose(b.edge_states, a.edge_states * flips, atol=1e-10)


def test_skew_flow_rejects_bad_sign():
    with pytest.raises(ValidationError):
        skew_flow(build_incidence([[0, 1]], 2), [1.0, 0.0], [0.0], [0.0], sign=2)


def test_rollout_energy_without_edges():
    assert rollout_energy(Trajectory(times=[0.0], states=[[1.0]])) is None
