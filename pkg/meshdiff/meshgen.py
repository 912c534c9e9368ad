"""Physically driven mesh generation and synthetic point clouds on an ellipsoid."""

import warnings
from typing import Any, Callable, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .config import MeshGenConfig, PointCloudConfig
from .errors import NumericalError, ValidationError
from .graph import build_knn_graph, edge_weights, generator_from_edges, make_graph_sample
from .meshio import gaussian_initial_condition
from .models import GraphSample, HealingParams, SurfaceState, WoundSeries
from .utils import as_float_array, make_rng

DEFAULT_CENTER = (0.5, 0.5, 0.5)
DEFAULT_SEMI_AXES = (0.6, 0.4, 0.3)

POINT_CLOUD_KINDS = ("uniform", "jittered", "clustered", "poisson")


def ellipsoid_point(
    u1: Any, u2: Any, center=DEFAULT_CENTER, semi_axes=DEFAULT_SEMI_AXES
) -> np.ndarray:
    """Map uniform variates to the surface: theta = 2 pi u1, phi = arccos(2 u2 - 1)."""
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    theta = 2.0 * np.pi * u1
    phi = np.arccos(np.clip(2.0 * u2 - 1.0, -1.0, 1.0))
    a, b, c = _axes(semi_axes)
    local = np.stack(
        [a * np.sin(phi) * np.cos(theta), b * np.sin(phi) * np.sin(theta), c * np.cos(phi)],
        axis=-1,
    )
    return np.asarray(center, dtype=np.float64) + local


def sample_ellipsoid(
    n: int, center=DEFAULT_CENTER, semi_axes=DEFAULT_SEMI_AXES, seed: Optional[int] = None
) -> np.ndarray:
    """n points on the ellipsoid surface, deterministic per seed."""
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    _axes(semi_axes)
    u = make_rng(seed).random((n, 2))
    return ellipsoid_point(u[:, 0], u[:, 1], center, semi_axes)


def ellipsoid_residual(
    positions: Any, center=DEFAULT_CENTER, semi_axes=DEFAULT_SEMI_AXES
) -> np.ndarray:
    """Left-hand side of the surface equation minus one."""
    x = as_float_array(positions, "positions", ndim=2, width=3)
    q = (x - np.asarray(center)) / np.asarray(_axes(semi_axes))
    return np.sum(q * q, axis=1) - 1.0


def ellipsoid_normals(
    positions: Any, center=DEFAULT_CENTER, semi_axes=DEFAULT_SEMI_AXES
) -> np.ndarray:
    """Unit outward normals of the level set through each point."""
    x = as_float_array(positions, "positions", ndim=2, width=3)
    axes = np.asarray(_axes(semi_axes))
    grad = (x - np.asarray(center)) / (axes * axes)
    norm = np.linalg.norm(grad, axis=1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValidationError("normal undefined at the ellipsoid center")
    return grad / norm


def ellipsoid_boundary_mask(
    positions: Any, delta: float, center=DEFAULT_CENTER, semi_axes=DEFAULT_SEMI_AXES
) -> np.ndarray:
    """Nodes satisfying the surface equation within ``delta``."""
    return np.abs(ellipsoid_residual(positions, center, semi_axes)) <= delta


def step_healing_damage_stress(state: SurfaceState, params: HealingParams, L: Any) -> SurfaceState:
    """One explicit Euler step of the healing-damage-stress system from the old state."""
    h, D, sigma = state.h, state.D, state.sigma
    dt = params.dt
    lap_h = np.asarray(L @ h).reshape(-1)
    h_raw = h + dt * (params.D_h * lap_h + params.eta * (1.0 - h) - params.lam * D)
    if not np.all(np.isfinite(h_raw)) or np.any(h_raw < -1.0) or np.any(h_raw > 2.0):
        raise NumericalError(
            f"unstable healing step at t={state.t:.6g}: healing field left [-1, 2] before "
            f"clamping (dt={dt})"
        )
    D_new = np.maximum(D + dt * (-params.beta * D * (1.0 - h)), 0.0)
    sigma_new = sigma + dt * (params.k1 * h - params.k2 * D - params.k3 * sigma)
    return SurfaceState(
        positions=state.positions,
        h=np.clip(h_raw, 0.0, 1.0),
        D=D_new,
        sigma=sigma_new,
        t=state.t + dt,
    )


def displace_by_stress(
    state: SurfaceState,
    params: HealingParams,
    gain: Optional[float] = None,
    center=DEFAULT_CENTER,
    semi_axes=DEFAULT_SEMI_AXES,
) -> np.ndarray:
    """Move each node along its outward normal by ``gain * sigma_i``.

    ``gain`` defaults to the displacement scale of ``params``.
    """
    scale = params.displacement_scale if gain is None else gain
    if scale == 0.0 or not np.any(state.sigma):
        return state.positions.copy()
    normals = ellipsoid_normals(state.positions, center, semi_axes)
    return state.positions + scale * state.sigma[:, None] * normals


def initial_wound(
    positions: np.ndarray,
    radius: float,
    rng: np.random.Generator,
    center=DEFAULT_CENTER,
    semi_axes=DEFAULT_SEMI_AXES,
) -> np.ndarray:
    """Damage 1 inside a spherical cap around a random node, 0 outside."""
    dirs = (positions - np.asarray(center)) / np.asarray(_axes(semi_axes))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    seed_dir = dirs[rng.integers(len(dirs))]
    angle = np.arccos(np.clip(dirs @ seed_dir, -1.0, 1.0))
    return (angle <= radius).astype(np.float64)


class MeshGenerator:
    """Runs the healing simulation on a sampled ellipsoid and packs the final graph."""

    def __init__(
        self,
        config: Optional[MeshGenConfig] = None,
        verbose: bool = False,
        log_callback: Callable[[str], None] = None,
        progress_callback: Callable[[int, int], None] = None,
    ):
        self.config = config or MeshGenConfig()
        self.verbose = verbose
        self.log_callback = log_callback
        self.progress_callback = progress_callback

    def _log(self, message: str):
        if self.verbose and self.log_callback:
            self.log_callback(message)

    def _generator(self, positions: np.ndarray) -> sp.csr_matrix:
        edges = build_knn_graph(positions, self.config.k)
        weights = edge_weights(positions, edges, "inverse", self.config.epsilon)
        return generator_from_edges(len(positions), edges, weights)

    def generate(self) -> Tuple[GraphSample, WoundSeries]:
        cfg = self.config
        params = cfg.healing
        rng = make_rng(cfg.seed)
        center, axes = cfg.center, cfg.semi_axes

        u = rng.random((cfg.n, 2))
        positions = ellipsoid_point(u[:, 0], u[:, 1], center, axes)
        D0 = initial_wound(positions, cfg.wound_radius, rng, center, axes)
        state = SurfaceState(positions=positions, h=1.0 - D0, D=D0, sigma=np.zeros(cfg.n))
        self._log(f"Sampled {cfg.n} points, wound covers {int(D0.sum())} nodes")

        wound = WoundSeries()
        wound.append(0, state.t, state.wound_size, state.D)
        L = self._generator(state.positions)
        gain = params.displacement_scale * params.dt

        for step in range(1, params.n_steps + 1):
            if step > 1 and (step - 1) % cfg.refresh_every == 0:
                L = self._generator(state.positions)
            state = step_healing_damage_stress(state, params, L)
            # stress relative to the surface median; undisturbed tissue stays on the ellipsoid
            excess = state.model_copy(update={"sigma": state.sigma - np.median(state.sigma)})
            moved = displace_by_stress(excess, params, gain=gain, center=center, semi_axes=axes)
            state = state.model_copy(update={"positions": moved})
            wound.append(step, state.t, state.wound_size, state.D)
            if self.progress_callback:
                self.progress_callback(step, params.n_steps)
            if step % cfg.refresh_every == 0:
                self._log(f"step {step}: t={state.t:.3f} wound={state.wound_size:.6g}")

        if not wound.is_non_increasing():
            raise NumericalError("total wound size increased during healing")

        edges = build_knn_graph(state.positions, cfg.k)
        boundary = ellipsoid_boundary_mask(state.positions, cfg.delta, center, axes)
        if not boundary.any():
            warnings.warn(
                f"no node lies within delta={cfg.delta} of the ellipsoid; sample has no "
                "Dirichlet boundary",
                stacklevel=2,
            )
        elif boundary.all():
            warnings.warn(
                f"every node lies within delta={cfg.delta} of the ellipsoid; sample has no "
                "interior nodes",
                stacklevel=2,
            )
        self._log(f"Final graph: {len(edges)} edges, {int(boundary.sum())} boundary nodes")

        diffusivity = cfg.diffusivity * (1.0 + cfg.diffusivity_contrast * state.D)
        sample = make_graph_sample(
            positions=state.positions,
            edges=edges,
            boundary_mask=boundary,
            diffusivity=diffusivity,
            u0=state.h,
            metadata={"source": "physical", "n": cfg.n, "k": cfg.k, "seed": cfg.seed},
            epsilon=cfg.epsilon,
        )
        return sample, wound


def generate_physical_mesh(
    params: Optional[HealingParams] = None,
    k: Optional[int] = None,
    seed: Optional[int] = None,
    n: Optional[int] = None,
    config: Optional[MeshGenConfig] = None,
    **kwargs,
) -> Tuple[GraphSample, WoundSeries]:
    """Sample, heal, displace and rebuild; returns the graph sample and the wound-size series."""
    base = config or MeshGenConfig()
    update = {key: v for key, v in (("k", k), ("seed", seed), ("n", n)) if v is not None}
    if params is not None:
        update["healing"] = params
    cfg = MeshGenConfig.model_validate({**base.model_dump(), **update})
    return MeshGenerator(cfg, **kwargs).generate()


# --- synthetic volume clouds ---


def sample_point_cloud(
    kind: str,
    n: int,
    seed: Optional[int] = None,
    center=DEFAULT_CENTER,
    semi_axes=DEFAULT_SEMI_AXES,
    jitter: float = 0.3,
    n_clusters: int = 5,
    cluster_spread: float = 0.15,
    min_separation: Optional[float] = None,
) -> np.ndarray:
    """n points inside the ellipsoid drawn by one of the irregular sampling laws."""
    if kind not in POINT_CLOUD_KINDS:
        raise ValidationError(
            f"unknown point cloud kind {kind!r}; expected one of {POINT_CLOUD_KINDS}"
        )
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    rng = make_rng(seed)
    axes = np.asarray(_axes(semi_axes))
    c = np.asarray(center, dtype=np.float64)

    if kind == "uniform":
        unit = _uniform_ball(rng, n)
    elif kind == "jittered":
        side = int(np.ceil((6.0 * n / np.pi) ** (1.0 / 3.0))) + 1
        while True:
            ticks = (np.arange(side) + 0.5) / side * 2.0 - 1.0
            grid = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 3)
            grid = grid + rng.uniform(-jitter, jitter, grid.shape) * (2.0 / side)
            inside = grid[np.sum(grid * grid, axis=1) <= 1.0]
            if len(inside) >= n:
                break
            side += 1
        unit = inside[np.sort(rng.choice(len(inside), n, replace=False))]
    elif kind == "clustered":
        centers = _uniform_ball(rng, n_clusters) * 0.7
        labels = rng.integers(n_clusters, size=n)
        unit = np.empty((n, 3))
        for i, lab in enumerate(labels):
            while True:
                p = centers[lab] + rng.normal(0.0, cluster_spread, 3)
                if p @ p <= 1.0:
                    unit[i] = p
                    break
    else:
        sep = min_separation if min_separation is not None else 0.5 * n ** (-1.0 / 3.0)
        unit = _dart_throwing(rng, n, sep)

    return c + unit * axes


def generate_point_cloud_mesh(config: Optional[PointCloudConfig] = None) -> GraphSample:
    """Volume cloud inside the ellipsoid, boundary = nodes near the surface, Gaussian IC."""
    cfg = config or PointCloudConfig()
    positions = sample_point_cloud(cfg.kind, cfg.n, cfg.seed, cfg.center, cfg.semi_axes)
    edges = build_knn_graph(positions, cfg.k)
    boundary = ellipsoid_boundary_mask(positions, cfg.delta, cfg.center, cfg.semi_axes)
    return make_graph_sample(
        positions=positions,
        edges=edges,
        boundary_mask=boundary,
        diffusivity=np.full(cfg.n, cfg.diffusivity),
        u0=gaussian_initial_condition(positions),
        metadata={"source": f"cloud-{cfg.kind}", "n": cfg.n, "k": cfg.k, "seed": cfg.seed},
        epsilon=cfg.epsilon,
    )


def _uniform_ball(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = rng.random(n) ** (1.0 / 3.0)
    return v * r[:, None]


def _dart_throwing(
    rng: np.random.Generator, n: int, sep: float, max_attempts: int = 200000
) -> np.ndarray:
    accepted = []
    attempts = 0
    while len(accepted) < n:
        if attempts >= max_attempts:
            raise ValidationError(
                f"poisson sampling placed only {len(accepted)} of {n} points "
                f"at separation {sep:.3g}"
            )
        attempts += 1
        p = _uniform_ball(rng, 1)[0]
        if accepted and np.min(np.linalg.norm(np.asarray(accepted) - p, axis=1)) < sep:
            continue
        accepted.append(p)
    return np.asarray(accepted)


def _axes(semi_axes) -> Tuple[float, float, float]:
    axes = tuple(float(a) for a in semi_axes)
    if len(axes) != 3 or min(axes) <= 0:
        raise ValidationError(f"semi-axes must be three positive numbers, got {semi_axes}")
    return axes
