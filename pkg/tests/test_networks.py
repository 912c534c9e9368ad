"""Tests for the dynamics models, time encoding and Euler rollout."""

import numpy as np
import pytest

from meshdiff.autodiff import DiffValue, const
from meshdiff.config import ModelConfig
from meshdiff.errors import NumericalError, ValidationError
from meshdiff.graph import (
    apply_edge_signed_permutation,
    apply_node_permutation,
    induced_edge_permutation,
)
from meshdiff.models import ModelKind, ModelParams
from meshdiff.networks import (
    GraphContext,
    encode_time,
    euler_rollout,
    gcn_forward,
    init_params,
    mlp_forward,
    model_forward,
    ocgnn_forward,
    zero_params,
)
from meshdiff.verify import flip_edges, random_sample


def _params(kind, seed=0, **overrides):
    cfg = ModelConfig(kind=kind, hidden=8, layers=2, seed=seed, **overrides)
    return init_params(cfg, kind)


# --- time encoding ---


def test_encoding_at_zero():
    gamma = encode_time(0.0, [1.0, 2.0, 4.0])
    assert np.array_equal(gamma[0::2], np.zeros(3))
    assert np.array_equal(gamma[1::2], np.ones(3))


def test_encoding_hand_value():
    assert encode_time(1.0, [1.0]) == pytest.approx([0.47943, 0.87758], abs=1e-5)


def test_encoding_large_time_limit():
    assert encode_time(1e12, [1.0]) == pytest.approx([0.84147, 0.54030], abs=1e-5)


def test_encoding_is_bounded():
    for t in np.geomspace(1e-3, 1e6, 50):
        assert np.all(np.abs(encode_time(t, [1, 2, 4, 8, 16])) <= 1.0)


def test_encoding_rejects_negative_time():
    with pytest.raises(ValidationError):
        encode_time(-0.1, [1.0])


# --- parameters ---


def test_init_is_seeded():
    a = _params(ModelKind.OCGNN, seed=3)
    b = _params(ModelKind.OCGNN, seed=3)
    assert np.array_equal(a.flatten(), b.flatten())
    assert a["anchor"].tolist() == [1.0]


def test_params_json_round_trip(tmp_path):
    params = _params(ModelKind.GCN)
    path = tmp_path / "params.json"
    params.to_json(path)
    loaded = ModelParams.from_json(path)
    assert loaded.kind == ModelKind.GCN
    assert loaded.names == params.names
    assert np.array_equal(loaded.flatten(), params.flatten())


def test_params_file_format_is_checked():
    with pytest.raises(ValueError):
        ModelParams.from_json({"format": "other", "version": 1})


# --- OCGNN ---


def test_zero_params_give_zero_dynamics(small_graph):
    params = zero_params(_params(ModelKind.OCGNN))
    f_dot, g_dot = ocgnn_forward(small_graph, small_graph.u0, 0.5, params)
    assert np.array_equal(f_dot.data, np.zeros(small_graph.n_nodes))
    assert np.array_equal(g_dot.data, np.zeros(small_graph.n_edges))


def test_constant_field_has_zero_differences(small_graph):
    """With only the difference channel active the first edge embedding vanishes."""
    params = zero_params(_params(ModelKind.OCGNN, use_anchor=False))
    tensors = dict(params.tensors)
    tensors["l0.ne.diff"] = np.ones_like(tensors["l0.ne.diff"])
    tensors["head_f.w"] = np.ones_like(tensors["head_f.w"])
    params = ModelParams(kind=params.kind, architecture=params.architecture, tensors=tensors)
    f_dot, _ = ocgnn_forward(small_graph, np.full(small_graph.n_nodes, 2.0), 0.0, params)
    assert np.array_equal(f_dot.data, np.zeros(small_graph.n_nodes))


def test_anchor_alone_is_pure_diffusion(small_graph):
    params = zero_params(_params(ModelKind.OCGNN))
    tensors = dict(params.tensors)
    tensors["anchor"] = np.array([1.0])
    params = ModelParams(kind=params.kind, architecture=params.architecture, tensors=tensors)
    ctx = GraphContext.from_graph(small_graph)
    f_dot, _ = ocgnn_forward(ctx, small_graph.u0, 0.0, params)
    assert np.allclose(f_dot.data, ctx.diffusion @ small_graph.u0, atol=1e-14)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ocgnn_permutation_equivariance(seed):
    graph = random_sample(8, seed=seed)
    params = _params(ModelKind.OCGNN, seed=seed)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(graph.n_nodes)
    f = rng.normal(size=graph.n_nodes)

    f_dot, g_dot = ocgnn_forward(graph, f, 0.3, params)
    moved = apply_node_permutation(graph, perm)
    f_dot_p, g_dot_p = ocgnn_forward(moved, apply_node_permutation(f, perm), 0.3, params)

    _, edge_perm, signs = induced_edge_permutation(graph.edges, perm)
    B = GraphContext.from_graph(graph).incidence
    g_expected, _ = apply_edge_signed_permutation(g_dot.data, B, edge_perm, signs, perm)
    assert np.max(np.abs(f_dot_p.data - apply_node_permutation(f_dot.data, perm))) < 1e-10
    assert np.max(np.abs(g_dot_p.data - g_expected)) < 1e-10


def test_ocgnn_orientation_invariance(small_graph, rng):
    params = _params(ModelKind.OCGNN, seed=4)
    flips = rng.choice([-1.0, 1.0], size=small_graph.n_edges)
    f = rng.normal(size=small_graph.n_nodes)
    f_dot, g_dot = ocgnn_forward(small_graph, f, 0.1, params)
    f_dot_s, g_dot_s = ocgnn_forward(flip_edges(small_graph, flips), f, 0.1, params)
    assert np.max(np.abs(f_dot_s.data - f_dot.data)) < 1e-10
    assert np.max(np.abs(g_dot_s.data - flips * g_dot.data)) < 1e-10


def test_ocgnn_shape_mismatch(small_graph):
    with pytest.raises(ValidationError):
        ocgnn_forward(small_graph, np.zeros(3), 0.0, _params(ModelKind.OCGNN))


def test_ocgnn_needs_ocgnn_params(small_graph):
    with pytest.raises(ValidationError):
        ocgnn_forward(small_graph, small_graph.u0, 0.0, _params(ModelKind.GCN))


# --- baselines ---


def test_gcn_zero_weights(small_graph):
    params = zero_params(_params(ModelKind.GCN))
    out = gcn_forward(small_graph, small_graph.u0, 0.0, params)
    assert np.array_equal(out.data, np.zeros(small_graph.n_nodes))


def test_gcn_permutation_equivariance():
    graph = random_sample(8, seed=11)
    params = _params(ModelKind.GCN, seed=2)
    perm = np.random.default_rng(0).permutation(8)
    out = gcn_forward(graph, graph.u0, 0.2, params)
    moved = apply_node_permutation(graph, perm)
    out_p = gcn_forward(moved, moved.u0, 0.2, params)
    assert np.max(np.abs(out_p.data - apply_node_permutation(out.data, perm))) < 1e-10


def test_mlp_ignores_edges(small_graph):
    params = _params(ModelKind.MLP)
    a = mlp_forward(small_graph.positions, small_graph.u0, 0.4, params)
    other = small_graph.model_copy(update={"edges": small_graph.edges[:3]})
    b = model_forward(GraphContext.from_graph(small_graph), small_graph.u0, 0.4, params)[0]
    c = mlp_forward(other.positions, other.u0, 0.4, params)
    assert np.array_equal(a.data, b.data)
    assert np.array_equal(a.data, c.data)


def test_mlp_shape_mismatch():
    with pytest.raises(ValidationError):
        mlp_forward(np.zeros((4, 2)), np.zeros(4), 0.0, _params(ModelKind.MLP))


# --- rollout ---


def _fixed_dynamics(f_dot):
    def step(ctx, f, t, params):
        return const(f_dot), None

    return step


def test_rollout_with_zero_dynamics_is_constant(two_node_graph):
    traj = euler_rollout(
        two_node_graph, _params(ModelKind.MLP), 1.0, 5, model=_fixed_dynamics([0.0, 0.0])
    )
    assert np.array_equal(traj.states, np.tile(two_node_graph.u0, (6, 1)))
    assert traj.edge_states is None


def test_rollout_hand_step(two_node_graph):
    graph = two_node_graph.model_copy(update={"u0": np.array([1.0, 2.0])})
    traj = euler_rollout(graph, _params(ModelKind.MLP), 0.1, 1, model=_fixed_dynamics([0.5, -1.0]))
    assert traj.states[-1] == pytest.approx([1.05, 1.9])
    assert traj.n_steps == 1


def test_rollout_resets_boundary(path_graph):
    dynamics = _fixed_dynamics([1.0] * 3)
    traj = euler_rollout(path_graph, _params(ModelKind.MLP), 1.0, 4, model=dynamics)
    assert np.all(traj.states[:, 0] == 0.0)


def test_rollout_is_deterministic(small_graph):
    params = _params(ModelKind.OCGNN, seed=7)
    a = euler_rollout(small_graph, params, 0.5, 10)
    b = euler_rollout(small_graph, params, 0.5, 10)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.edge_states, b.edge_states)


def test_ocgnn_rollout_starts_from_incidence_gradient(small_graph):
    params = _params(ModelKind.OCGNN)
    traj = euler_rollout(small_graph, params, 0.2, 2)
    ctx = GraphContext.from_graph(small_graph)
    assert np.array_equal(traj.edge_states[0], ctx.incidence.grad(small_graph.u0))


def test_rollout_reports_divergence(two_node_graph):
    with pytest.raises(NumericalError, match="rollout diverged at step 1"):
        euler_rollout(
            two_node_graph, _params(ModelKind.MLP), 1.0, 3, model=_fixed_dynamics([np.inf, 0.0])
        )


def test_model_forward_returns_diff_values(small_graph):
    for kind in ModelKind:
        f_dot, g_dot = model_forward(
            GraphContext.from_graph(small_graph), small_graph.u0, 0.0, _params(kind)
        )
        assert isinstance(f_dot, DiffValue)
        assert (g_dot is not None) == (kind == ModelKind.OCGNN)
