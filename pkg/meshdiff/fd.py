"""Explicit finite-difference diffusion on uniform and randomly perturbed 2D grids."""

from typing import Any, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import ValidationError
from .models import Trajectory
from .utils import make_rng


class Grid2D(BaseModel):
    """Structured nx x ny grid on the unit square; node (i, j) has flat index i * ny + j."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    nx: int = Field(ge=3)
    ny: int = Field(ge=3)
    coords: np.ndarray
    dx_mean: float
    dy_mean: float
    perturbation_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)

    @property
    def x(self) -> np.ndarray:
        return self.coords[:, 0].reshape(self.nx, self.ny)

    @property
    def y(self) -> np.ndarray:
        return self.coords[:, 1].reshape(self.nx, self.ny)

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros((self.nx, self.ny), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask


def make_grid(
    nx: int, ny: int, perturbation_fraction: float = 0.0, seed: Optional[int] = None
) -> Grid2D:
    """
    Uniform grid, optionally with every interior node offset by up to
    ``perturbation_fraction`` of the grid spacing per axis. Boundary nodes stay on the box.
    """
    if not 0.0 <= perturbation_fraction < 1.0:
        raise ValidationError(
            f"perturbation fraction must lie in [0, 1), got {perturbation_fraction}"
        )
    dx, dy = 1.0 / (nx - 1), 1.0 / (ny - 1)
    X, Y = np.meshgrid(np.linspace(0.0, 1.0, nx), np.linspace(0.0, 1.0, ny), indexing="ij")
    if perturbation_fraction > 0.0:
        rng = make_rng(seed)
        p = perturbation_fraction
        jitter_x = rng.uniform(-p, p, (nx - 2, ny - 2)) * dx
        jitter_y = rng.uniform(-p, p, (nx - 2, ny - 2)) * dy
        X[1:-1, 1:-1] = np.clip(X[1:-1, 1:-1] + jitter_x, 0.0, 1.0)
        Y[1:-1, 1:-1] = np.clip(Y[1:-1, 1:-1] + jitter_y, 0.0, 1.0)
    return Grid2D(
        nx=nx,
        ny=ny,
        coords=np.column_stack([X.reshape(-1), Y.reshape(-1)]),
        dx_mean=dx,
        dy_mean=dy,
        perturbation_fraction=perturbation_fraction,
    )


def cfl_timestep(dx: float, dy: float, D: float) -> float:
    """Largest stable explicit step: dx^2 dy^2 / (2 D (dx^2 + dy^2))."""
    if dx <= 0 or dy <= 0 or D <= 0:
        raise ValidationError(f"dx, dy and D must be positive (got {dx}, {dy}, {D})")
    dx2, dy2 = dx * dx, dy * dy
    return dx2 * dy2 / (2.0 * D * (dx2 + dy2))


def hot_disc(grid: Grid2D, radius: float = 0.2, center=(0.5, 0.5)) -> np.ndarray:
    """1 inside the disc, 0 outside, as an (nx, ny) array."""
    r2 = (grid.x - center[0]) ** 2 + (grid.y - center[1]) ** 2
    return (r2 <= radius * radius).astype(np.float64)


class FDResult(BaseModel):
    """Recorded states and per-step diagnostics of an explicit run."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    dt: float
    steps: List[int]
    states: np.ndarray
    max_u: List[float]
    diverged_flags: List[bool]
    heat: List[float]
    boundary_flux: List[float]
    diverged: bool = False
    diverged_at: Optional[int] = None

    def trajectory(self) -> Trajectory:
        if self.dt <= 0:
            raise ValidationError("a zero time step has no increasing time axis")
        return Trajectory(times=np.asarray(self.steps) * self.dt, states=self.states)


def run_fd_diffusion(
    grid: Grid2D,
    D: float,
    dt: float,
    n_steps: int,
    initial: Any = None,
    fixed_boundary: bool = True,
    divergence_factor: float = 10.0,
    record_every: int = 50,
) -> FDResult:
    """
    Naive explicit 5-point scheme using true neighbour distances.

    Coefficient towards neighbour q: 2D / (h_q (h_q + h_opposite)). Divergence is flagged
    once max|u| exceeds ``divergence_factor`` times its initial value or goes non-finite,
    and the flag never clears.
    """
    if D <= 0:
        raise ValidationError(f"D must be positive, got {D}")
    if dt < 0:
        raise ValidationError(f"dt must be non-negative, got {dt}")
    if initial is None:
        u = hot_disc(grid)
    else:
        u = np.array(initial, dtype=np.float64).reshape(grid.nx, grid.ny)
    if not np.all(np.isfinite(u)):
        raise ValidationError("initial condition must be finite")

    X, Y = grid.x, grid.y
    inner = (slice(1, -1), slice(1, -1))

    def dist(di: int, dj: int) -> np.ndarray:
        xs = X[1 + di:X.shape[0] - 1 + di, 1 + dj:X.shape[1] - 1 + dj]
        ys = Y[1 + di:Y.shape[0] - 1 + di, 1 + dj:Y.shape[1] - 1 + dj]
        return np.hypot(xs - X[inner], ys - Y[inner])

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        hE, hW, hN, hS = dist(1, 0), dist(-1, 0), dist(0, 1), dist(0, -1)
        cE = 2.0 * D / (hE * (hE + hW))
        cW = 2.0 * D / (hW * (hE + hW))
        cN = 2.0 * D / (hN * (hN + hS))
        cS = 2.0 * D / (hS * (hN + hS))

    # interior nodes whose neighbour in a direction is a boundary node
    nxi, nyi = grid.nx - 2, grid.ny - 2
    touch_E = np.zeros((nxi, nyi), bool)
    touch_W = np.zeros((nxi, nyi), bool)
    touch_N = np.zeros((nxi, nyi), bool)
    touch_S = np.zeros((nxi, nyi), bool)
    touch_E[-1, :] = touch_W[0, :] = touch_N[:, -1] = touch_S[:, 0] = True

    initial_max = float(np.max(np.abs(u)))
    threshold = divergence_factor * initial_max
    steps, states = [0], [u.reshape(-1).copy()]
    max_u, flags, heat, fluxes = [initial_max], [False], [float(u[inner].sum())], []
    diverged_at: Optional[int] = None

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for step in range(1, n_steps + 1):
            c = u[inner]
            dE = u[2:, 1:-1] - c
            dW = u[:-2, 1:-1] - c
            dN = u[1:-1, 2:] - c
            dS = u[1:-1, :-2] - c
            flux = dt * (
                np.sum((cE * dE)[touch_E]) + np.sum((cW * dW)[touch_W])
                + np.sum((cN * dN)[touch_N]) + np.sum((cS * dS)[touch_S])
            )
            u = u.copy()
            u[inner] = c + dt * (cE * dE + cW * dW + cN * dN + cS * dS)
            if not fixed_boundary:
                u[0, :], u[-1, :] = u[1, :], u[-2, :]
                u[:, 0], u[:, -1] = u[:, 1], u[:, -2]

            current = float(np.max(np.abs(u)))
            if diverged_at is None and (not np.isfinite(current) or current > threshold):
                diverged_at = step
            max_u.append(current)
            flags.append(diverged_at is not None)
            heat.append(float(u[inner].sum()))
            fluxes.append(float(flux))
            if step % record_every == 0 or step == n_steps:
                steps.append(step)
                states.append(u.reshape(-1).copy())

    return FDResult(
        dt=dt,
        steps=steps,
        states=np.asarray(states),
        max_u=max_u,
        diverged_flags=flags,
        heat=heat,
        boundary_flux=fluxes,
        diverged=diverged_at is not None,
        diverged_at=diverged_at,
    )
