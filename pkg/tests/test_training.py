"""Tests for the physics-informed losses, loss weights and the training loop."""

import numpy as np
import pytest

from meshdiff.autodiff import grad_check
from meshdiff.config import ModelConfig, TrainConfig
from meshdiff.errors import ValidationError
from meshdiff.graph import (
    apply_edge_signed_permutation,
    apply_node_permutation,
    build_incidence,
    induced_edge_permutation,
)
from meshdiff.models import ModelKind
from meshdiff.networks import GraphContext, init_params
from meshdiff.training import (
    Adam,
    RunningScale,
    Trainer,
    energy_terms,
    loss_bc,
    loss_ic,
    loss_pde,
    loss_ptensor,
    train,
    update_lambdas,
)
from meshdiff.verify import random_sample

SMALL_MODEL = ModelConfig(hidden=4, layers=1, omegas=[1.0, 4.0])


def _train_config(**overrides):
    values = {"epochs": 3, "T": 0.3, "nt": 3, "lr": 1e-3}
    values.update(overrides)
    return TrainConfig(**values)


# --- loss terms ---


def test_pde_loss_two_nodes(two_node_graph):
    loss = loss_pde(np.zeros(2), [1.0, 0.0], two_node_graph)
    assert loss.item() == pytest.approx(1.0)


def test_pde_loss_vanishes_on_exact_dynamics(small_graph):
    ctx = GraphContext.from_graph(small_graph)
    f = small_graph.u0
    assert loss_pde(ctx.diffusion @ f, f, ctx).item() == 0.0


def test_pde_loss_constant_field():
    graph = random_sample(6, seed=2)
    assert loss_pde(np.zeros(6), np.full(6, 3.0), graph).item() == pytest.approx(0.0, abs=1e-24)


def test_pde_loss_is_scaled(two_node_graph):
    loss = loss_pde(np.zeros(2), [1.0, 0.0], two_node_graph, scale=0.25)
    assert loss.item() == pytest.approx(0.25)


def test_bc_loss(path_graph):
    values = [np.array([0.1, 5.0, 5.0]), np.array([0.1, -2.0, 0.0])]
    assert loss_bc(values, path_graph.boundary_mask).item() == pytest.approx(0.01)
    assert loss_bc(values, path_graph.boundary_mask, boundary_value=0.1).item() == 0.0


def test_bc_loss_without_boundary(two_node_graph):
    assert loss_bc([np.ones(2)], two_node_graph.boundary_mask).item() == 0.0


def test_ic_loss(path_graph):
    assert loss_ic(path_graph.u0, path_graph.u0).item() == 0.0
    assert loss_ic([0.0, 1.0, 1.0], [0.0, 0.0, 0.0]).item() == pytest.approx(2.0 / 3.0)


def test_ptensor_loss_single_edge():
    B = build_incidence([[0, 1]], 2)
    loss = loss_ptensor(np.zeros(2), np.zeros(1), [1.0, 0.0], [0.0], B)
    assert loss.item() == pytest.approx(1.0)


def test_ptensor_loss_vanishes_on_skew_dynamics(small_graph, rng):
    B = build_incidence(small_graph.edges, small_graph.n_nodes)
    f = rng.normal(size=small_graph.n_nodes)
    g = rng.normal(size=small_graph.n_edges)
    loss = loss_ptensor(B.matrix.T @ g, -(B.matrix @ f), f, g, B)
    assert loss.item() == 0.0


def test_ptensor_loss_normalization():
    B = build_incidence([[0, 1]], 2)
    loss = loss_ptensor(np.zeros(2), np.zeros(1), [1.0, 0.0], [0.0], B, alpha_g=2.0)
    assert loss.item() == pytest.approx(0.25)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_ptensor_loss_is_permutation_invariant(seed):
    graph = random_sample(9, seed=seed)
    rng = np.random.default_rng(seed)
    B = build_incidence(graph.edges, graph.n_nodes)
    f, f_dot = rng.normal(size=(2, graph.n_nodes))
    g, g_dot = rng.normal(size=(2, graph.n_edges))
    base = loss_ptensor(f_dot, g_dot, f, g, B).item()

    perm = rng.permutation(graph.n_nodes)
    _, edge_perm, signs = induced_edge_permutation(graph.edges, perm)
    flips = signs * rng.choice([-1.0, 1.0], size=graph.n_edges)
    g_p, B_p = apply_edge_signed_permutation(g, B, edge_perm, flips, perm)
    g_dot_p, _ = apply_edge_signed_permutation(g_dot, B, edge_perm, flips, perm)
    moved = loss_ptensor(
        apply_node_permutation(f_dot, perm), g_dot_p, apply_node_permutation(f, perm), g_p, B_p
    ).item()
    assert abs(moved - base) < 1e-10


def test_ptensor_loss_edge_mismatch():
    B = build_incidence([[0, 1], [1, 2]], 3)
    with pytest.raises(ValidationError, match="edge"):
        loss_ptensor(np.zeros(3), np.zeros(2), np.zeros(3), np.zeros(3), B)


# --- loss weights ---


def test_equal_losses_give_unit_lambdas():
    assert update_lambdas([2.0, 2.0, 2.0, 2.0]) == pytest.approx((1.0, 1.0, 1.0, 1.0))


def test_largest_loss_gets_smallest_lambda():
    lambdas = update_lambdas([100.0, 1.0, 3.0, 0.5])
    assert int(np.argmin(lambdas)) == 0
    assert sum(lambdas) == pytest.approx(4.0)


def test_pde_lambda_drops_when_its_loss_grows():
    first = update_lambdas([1.0, 1.0, 1.0, 1.0])
    second = update_lambdas([100.0, 1.0, 1.0, 1.0], first)
    assert second[0] < first[0]


def test_inactive_terms_get_zero():
    lambdas = update_lambdas([1.0, 2.0, 3.0, 4.0], active=[True, True, True, False])
    assert lambdas[3] == 0.0
    assert sum(lambdas) == pytest.approx(3.0)


def test_zero_losses_keep_unit_lambdas():
    assert update_lambdas([0.0, 0.0, 0.0, 0.0]) == (1.0, 1.0, 1.0, 1.0)


def test_zero_losses_keep_previous_lambdas():
    previous = (2.0, 0.5, 1.0, 0.5)
    assert update_lambdas([0.0, 0.0, 0.0, 0.0], previous) == previous


def test_running_scale_is_exact_for_constant_input():
    scale = RunningScale(momentum=0.9)
    values = [scale.update(0.1) for _ in range(50)]
    assert values == [0.1] * 50


def test_lambdas_are_clipped():
    lambdas = update_lambdas([1e12, 0.0, 0.0, 0.0], lambda_min=0.5)
    assert min(lambdas) >= 0.5


def test_lambdas_reject_negative_losses():
    with pytest.raises(ValidationError):
        update_lambdas([-1.0, 0.0, 0.0, 0.0])


# --- energy diagnostics ---


@pytest.mark.parametrize("seed", range(5))
def test_energy_bound_and_skew_identity(seed):
    graph = random_sample(8, seed=seed)
    rng = np.random.default_rng(seed)
    B = build_incidence(graph.edges, graph.n_nodes)
    f, f_dot = rng.normal(size=(2, graph.n_nodes))
    g, g_dot = rng.normal(size=(2, graph.n_edges))
    terms = energy_terms(f, g, f_dot, g_dot, B)
    assert abs(terms["residual"]) <= terms["bound"]
    assert abs(terms["skew"]) < 1e-10
    assert terms["rate"] == pytest.approx(terms["residual"] + terms["skew"])


# --- optimizer helpers ---


def test_adam_first_step_is_lr_sized():
    adam = Adam(3, lr=0.1)
    theta = adam.step(np.zeros(3), np.array([2.0, -0.5, 0.0]))
    assert theta == pytest.approx([-0.1, 0.1, 0.0], abs=1e-6)


def test_adam_rejects_wrong_gradient_shape():
    with pytest.raises(ValidationError):
        Adam(3).step(np.zeros(3), np.zeros(2))


def test_running_scale():
    scale = RunningScale(momentum=0.5)
    assert scale.update(4.0) == 4.0
    assert scale.update(2.0) == 3.0


# --- training loop ---


def test_zero_epochs_keep_params(small_graph):
    params, history = train(small_graph, "ocgnn", _train_config(epochs=0), SMALL_MODEL)
    expected = init_params(SMALL_MODEL, ModelKind.OCGNN)
    assert history == []
    assert np.array_equal(params.flatten(), expected.flatten())


def test_zero_learning_rate_gives_constant_losses(small_graph):
    cfg = _train_config(epochs=4, lr=0.0)
    assert cfg.adaptive_lambdas and cfg.pde_scaling
    _, history = train(small_graph, "ocgnn", cfg, SMALL_MODEL)
    totals = [record.total for record in history]
    assert totals == pytest.approx([totals[0]] * 4, rel=1e-12)
    assert len({record.lambdas for record in history}) == 1


def test_recorded_lambdas_come_from_the_same_pass(small_graph):
    _, history = train(small_graph, "ocgnn", _train_config(), SMALL_MODEL)
    for record in history:
        losses = [record.l_pde, record.l_bc, record.l_ic, record.l_pt]
        expected = update_lambdas(losses, active=[lam != 0.0 for lam in record.lambdas])
        assert record.lambdas == pytest.approx(expected, rel=1e-9)


def test_history_decomposes_into_weighted_terms(small_graph):
    _, history = train(small_graph, "ocgnn", _train_config(), SMALL_MODEL)
    assert [r.epoch for r in history] == [0, 1, 2]
    for record in history:
        assert record.total == pytest.approx(record.weighted_sum(), rel=1e-12)
        assert all(0.0 < lam for lam in record.lambdas)


def test_history_energy_stays_within_bound(small_graph):
    _, history = train(small_graph, "ocgnn", _train_config(epochs=4), SMALL_MODEL)
    for record in history:
        assert abs(record.energy_rate) <= record.energy_bound + 1e-9 * max(1.0, record.energy_bound)
        assert abs(record.energy_skew) < 1e-10


def test_ptensor_term_only_for_ocgnn(small_graph):
    cfg = ModelConfig(hidden=4, layers=1, omegas=[1.0], kind="gcn")
    trainer = Trainer(small_graph, "gcn", _train_config(epochs=2), cfg)
    _, history = trainer.train()
    assert all(r.lambdas[3] == 0.0 and r.l_pt == 0.0 for r in history)


def test_data_supervision_uses_only_the_data_term(small_graph):
    cfg = _train_config(supervision="data")
    _, history = train(small_graph, "mlp", cfg, ModelConfig(hidden=4, layers=1, omegas=[1.0]))
    for record in history:
        assert record.lambdas == (0.0, 0.0, 0.0, 0.0)
        assert record.total == record.l_data
        assert record.l_data > 0.0


def test_sample_indices_include_start(small_graph):
    trainer = Trainer(small_graph, "ocgnn", _train_config(nt=10, n_samples=4), SMALL_MODEL)
    indices = trainer.sample_indices()
    assert indices[0] == 0
    assert len(np.unique(indices)) == 4
    assert np.all(indices < 10)


def test_trainer_rejects_params_of_another_kind(small_graph):
    params = init_params(SMALL_MODEL, ModelKind.GCN)
    with pytest.raises(ValidationError):
        Trainer(small_graph, "ocgnn", _train_config(), SMALL_MODEL, params=params)


def test_trainer_needs_interior_nodes(small_graph):
    graph = small_graph.model_copy(update={"boundary_mask": np.ones(10, dtype=bool)})
    with pytest.raises(ValidationError, match="no interior nodes"):
        Trainer(graph, "ocgnn", _train_config(), SMALL_MODEL)


def test_trainer_reports_progress(small_graph):
    calls = []
    trainer = Trainer(
        small_graph,
        "gcn",
        _train_config(epochs=2),
        ModelConfig(hidden=4, layers=1, omegas=[1.0], kind="gcn"),
        progress_callback=lambda done, total: calls.append((done, total)),
    )
    trainer.train()
    assert calls == [(1, 2), (2, 2)]


def test_full_loss_gradient_matches_finite_differences():
    graph = random_sample(10, seed=8)
    trainer = Trainer(graph, "ocgnn", _train_config(), SMALL_MODEL)
    theta = trainer.params.flatten()
    indices = np.random.default_rng(0).choice(theta.size, size=25, replace=False)
    result = grad_check(trainer.loss_function(), theta, h=1e-6, tol=1e-3, indices=indices)
    assert result.passed, f"max error {result.max_error:.2e}"


@pytest.mark.slow
def test_training_reduces_total_loss_fivefold(small_graph):
    """Default settings on the 10-node demo graph, median over five seeds."""
    ratios = []
    for seed in range(5):
        cfg = TrainConfig(epochs=300, seed=seed)
        _, history = train(small_graph, "ocgnn", cfg, ModelConfig(seed=seed))
        ratios.append(history[-1].total / history[0].total)
    assert np.median(ratios) <= 0.2
