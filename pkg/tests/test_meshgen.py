"""Tests for the healing simulation mesh generator and synthetic point clouds."""

import numpy as np
import pytest
import scipy.sparse as sp

from meshdiff.config import MeshGenConfig, PointCloudConfig
from meshdiff.errors import NumericalError, ValidationError
from meshdiff.meshgen import (
    MeshGenerator,
    displace_by_stress,
    ellipsoid_point,
    ellipsoid_residual,
    generate_physical_mesh,
    generate_point_cloud_mesh,
    sample_ellipsoid,
    sample_point_cloud,
    step_healing_damage_stress,
)
from meshdiff.models import HealingParams, SurfaceState


def _state(positions, h, D, sigma=None):
    n = len(positions)
    return SurfaceState(
        positions=positions,
        h=h,
        D=D,
        sigma=np.zeros(n) if sigma is None else sigma,
    )


def _small_config(**overrides):
    healing = HealingParams(n_steps=20, dt=0.01)
    base = dict(n=120, k=6, seed=5, refresh_every=10, delta=0.2, healing=healing)
    base.update(overrides)
    return MeshGenConfig(**base)


# --- ellipsoid sampling ---


def test_samples_lie_on_ellipsoid():
    positions = sample_ellipsoid(1000, seed=0)
    assert np.max(np.abs(ellipsoid_residual(positions))) < 1e-12


def test_pole_sample():
    """u1 = 0, u2 = 1 is the +z pole."""
    point = ellipsoid_point(0.0, 1.0)
    assert point == pytest.approx([0.5, 0.5, 0.8], abs=1e-15)


def test_sampling_is_deterministic():
    assert np.array_equal(sample_ellipsoid(1000, seed=9), sample_ellipsoid(1000, seed=9))


def test_sampling_rejects_bad_axes():
    with pytest.raises(ValidationError):
        sample_ellipsoid(5, semi_axes=(1.0, 0.0, 1.0))


# --- healing step ---


def test_fully_healed_damage_is_frozen():
    params = HealingParams()
    state = _state(sample_ellipsoid(4, seed=1), np.ones(4), np.full(4, 0.3))
    out = step_healing_damage_stress(state, params, sp.csr_matrix((4, 4)))
    assert np.array_equal(out.D, state.D)


def test_uniform_healing_grows_toward_one():
    params = HealingParams(dt=0.1)
    L = sp.csr_matrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    state = _state(sample_ellipsoid(2, seed=1), np.full(2, 0.5), np.zeros(2))
    out = step_healing_damage_stress(state, params, L)
    assert out.h == pytest.approx([0.55, 0.55])


def test_single_node_hand_step():
    params = HealingParams(eta=1.0, lam=0.5, beta=1.0, dt=0.1)
    state = _state([[0.5, 0.5, 0.8]], [0.0], [1.0])
    out = step_healing_damage_stress(state, params, sp.csr_matrix((1, 1)))
    assert out.h[0] == pytest.approx(0.05)
    assert out.D[0] == pytest.approx(0.9)
    assert out.t == pytest.approx(0.1)


def test_unstable_step_is_reported():
    params = HealingParams(eta=1.0, lam=0.0, dt=5.0)
    state = _state([[0.5, 0.5, 0.8]], [0.0], [0.0])
    with pytest.raises(NumericalError, match="unstable healing step"):
        step_healing_damage_stress(state, params, sp.csr_matrix((1, 1)))


# --- displacement ---


def test_zero_stress_does_not_move():
    positions = sample_ellipsoid(5, seed=2)
    out = displace_by_stress(_state(positions, np.ones(5), np.zeros(5)), HealingParams())
    assert np.array_equal(out, positions)


def test_zero_scale_does_not_move():
    positions = sample_ellipsoid(5, seed=2)
    state = _state(positions, np.ones(5), np.zeros(5), sigma=np.ones(5))
    out = displace_by_stress(state, HealingParams(displacement_scale=0.0))
    assert np.array_equal(out, positions)


def test_pole_moves_along_normal():
    state = _state([[0.0, 0.0, 1.0]], [1.0], [0.0], sigma=[0.1])
    out = displace_by_stress(
        state, HealingParams(displacement_scale=1.0), center=(0, 0, 0), semi_axes=(1, 1, 1)
    )
    assert out[0] == pytest.approx([0.0, 0.0, 1.1])


# --- full generation ---


def test_frozen_damage_keeps_wound_constant():
    cfg = _small_config(healing=HealingParams(n_steps=15, beta=0.0))
    _, wound = MeshGenerator(cfg).generate()
    assert len(set(wound.sum_damage)) == 1


def test_wound_size_is_non_increasing():
    _, wound = MeshGenerator(_small_config()).generate()
    assert wound.is_non_increasing()
    assert wound.steps == list(range(21))


def test_generation_is_deterministic():
    a, _ = MeshGenerator(_small_config()).generate()
    b, _ = MeshGenerator(_small_config()).generate()
    assert a.to_json() == b.to_json()


def test_generated_sample_fields():
    sample, _ = generate_physical_mesh(config=_small_config())
    assert sample.n_nodes == 120
    assert np.all(sample.edges[:, 0] < sample.edges[:, 1])
    assert np.all((sample.u0 >= 0.0) & (sample.u0 <= 1.0))
    assert sample.metadata["source"] == "physical"


def test_keyword_overrides_apply():
    sample, wound = generate_physical_mesh(
        params=HealingParams(n_steps=3), k=4, seed=1, n=60, config=_small_config()
    )
    assert sample.n_nodes == 60
    assert sample.metadata["k"] == 4
    assert len(wound.sum_damage) == 4


def test_default_mesh_has_boundary_and_interior():
    """Undisturbed tissue stays on the surface; the healing wound sinks below it."""
    sample, _ = generate_physical_mesh(n=300, seed=0)
    assert sample.boundary_mask.any()
    assert sample.interior_mask.any()
    assert np.all(np.abs(ellipsoid_residual(sample.positions[sample.boundary_mask])) <= 0.05)


def test_damage_range_is_recorded():
    _, wound = MeshGenerator(_small_config()).generate()
    assert len(wound.min_damage) == len(wound.steps)
    assert wound.max_damage[0] == 1.0
    assert wound.damage_in_range()


def test_progress_is_reported():
    calls = []
    MeshGenerator(_small_config(), progress_callback=lambda d, t: calls.append((d, t))).generate()
    assert calls[-1] == (20, 20)


# --- point clouds ---


@pytest.mark.parametrize("kind", ["uniform", "jittered", "clustered", "poisson"])
def test_point_clouds_stay_inside(kind):
    positions = sample_point_cloud(kind, 80, seed=3)
    assert positions.shape == (80, 3)
    assert np.all(ellipsoid_residual(positions) <= 1e-12)


def test_unknown_point_cloud_kind():
    with pytest.raises(ValidationError):
        sample_point_cloud("spiral", 10)


def test_point_cloud_mesh():
    sample = generate_point_cloud_mesh(PointCloudConfig(n=150, k=6, delta=0.3, seed=2))
    assert sample.n_nodes == 150
    assert sample.boundary_mask.any()
    assert sample.interior_mask.any()
    assert np.all(sample.diffusivity == 0.05)
