"""Crank-Nicolson reference solver for graph diffusion with Dirichlet boundaries."""

from dataclasses import dataclass
from typing import Any, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import NumericalError, ValidationError
from .graph import (
    degree_vector,
    edge_weights,
    variant_weight_law,
    weighted_adjacency,
)
from .models import GraphSample, Trajectory, Variant
from .utils import EPSILON


def solve_sparse_spd(
    A: Any,
    b: Any,
    tol: float = 1e-10,
    max_iter: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Conjugate gradients until ``|b - Ax| <= tol |b|``."""
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValidationError(
            f"matrix shape {A.shape} does not match right-hand side of length {n}"
        )
    if max_iter is None:
        max_iter = max(10 * n, 100)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64).reshape(-1)
    r = b - A @ x
    d = r.copy()
    rr = r @ r
    target = tol * b_norm
    k = 0
    while np.sqrt(rr) > target:
        if k >= max_iter:
            raise NumericalError(
                f"conjugate gradient did not converge in {max_iter} iterations "
                f"(relative residual {np.sqrt(rr) / b_norm:.3e}, tolerance {tol:.1e})"
            )
        Ad = A @ d
        dAd = d @ Ad
        if not dAd > 0.0:
            raise NumericalError(
                f"conjugate gradient breakdown: matrix is not positive definite "
                f"(relative residual {np.sqrt(rr) / b_norm:.3e})"
            )
        alpha = rr / dAd
        x = x + alpha * d
        r = r - alpha * Ad
        rr_new = r @ r
        d = r + (rr_new / rr) * d
        rr = rr_new
        k += 1
    return x


@dataclass(frozen=True)
class DiffusionOperator:
    """
    du/dt = K u with a positive diagonal metric s making diag(s) K symmetric.

    Rows of K with zero diffusivity are zero; those nodes stay fixed.
    """

    matrix: sp.csr_matrix
    metric: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def frozen(self) -> np.ndarray:
        return self.metric <= 0.0

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    @classmethod
    def from_matrix(cls, matrix: Any, rtol: float = 1e-10) -> "DiffusionOperator":
        """
        Wrap a raw operator, recovering a metric from its row scaling.

        For K = diag(c) S with S symmetric the metric is 1 / c, fixed up to one constant
        per connected component by s_j / s_i = K_ij / K_ji. All-zero rows are frozen.
        """
        m = sp.csr_matrix(matrix, dtype=np.float64)
        n = m.shape[0]
        if m.shape != (n, n):
            raise ValidationError(f"operator must be square, got shape {m.shape}")
        if n and not np.all(np.isfinite(m.data)):
            raise ValidationError("operator has non-finite entries")
        active = np.asarray(abs(m).sum(axis=1)).reshape(-1) > 0
        idx = np.flatnonzero(active)
        K = m[idx][:, idx]
        off = sp.csr_matrix(K - sp.diags(K.diagonal()))
        off.eliminate_zeros()
        pattern = sp.csr_matrix(abs(off) + abs(off.T))

        local = np.zeros(idx.size)
        n_comp, labels = connected_components(pattern, directed=False)
        for comp in range(n_comp):
            root = int(np.flatnonzero(labels == comp)[0])
            order, pred = breadth_first_order(pattern, root, directed=False)
            local[root] = 1.0
            for v in order[1:]:
                p = pred[v]
                forward, backward = K[p, v], K[v, p]
                ratio = forward / backward if backward != 0.0 else 0.0
                if not ratio > 0.0:
                    raise ValidationError(
                        f"operator cannot be symmetrized by a positive metric: entries "
                        f"({p}, {v}) and ({v}, {p}) are {forward:g} and {backward:g}"
                    )
                local[v] = local[p] * ratio

        sym = sp.diags(local) @ K
        scale = max(1.0, abs(sym).max()) if sym.nnz else 1.0
        if sym.nnz and abs(sym - sym.T).max() > rtol * scale:
            raise ValidationError(
                "operator cannot be symmetrized by a positive metric; build it with "
                "diffusion_operator() to get its metric"
            )
        metric = np.zeros(n)
        metric[idx] = local
        return cls(matrix=m, metric=metric)


def diffusion_operator(
    graph: GraphSample,
    variant: Union[str, Variant] = Variant.IRREGULAR,
    normalized: bool = True,
    epsilon: float = EPSILON,
) -> DiffusionOperator:
    """
    Diffusivity-scaled operator of a CN variant.

    ``normalized`` gives diag(D) D_w^-1 (A_w - D_w) (generator convention); otherwise
    diag(D) (A_w - D_w). Weights follow the variant's law, 1/d or 1/d^2.
    """
    w = edge_weights(graph.positions, graph.edges, variant_weight_law(variant), epsilon)
    adj = weighted_adjacency(graph.n_nodes, graph.edges, w)
    deg = degree_vector(adj)
    diff = np.asarray(graph.diffusivity, dtype=np.float64)
    if np.any(diff < 0):
        raise ValidationError("diffusivity must be non-negative")
    active = diff > 0
    sym = adj - sp.diags(deg)
    if normalized:
        isolated = np.flatnonzero(deg <= 0)
        if isolated.size:
            raise ValidationError(f"zero degree at node {int(isolated[0])} (isolated node)")
        scale = diff / deg
    else:
        scale = diff
    metric = np.zeros(graph.n_nodes)
    metric[active] = 1.0 / scale[active]
    matrix = sp.csr_matrix(sp.diags(scale) @ sym)
    matrix.eliminate_zeros()
    return DiffusionOperator(matrix=matrix, metric=metric)


class CrankNicolsonStepper:
    """Assembles the symmetrized free-node CN system once and steps it repeatedly."""

    def __init__(
        self,
        operator: Union[DiffusionOperator, Any],
        dt: float,
        boundary_mask: Any,
        boundary_value: float = 0.0,
        tol: float = 1e-10,
        max_iter: Optional[int] = None,
    ):
        if dt <= 0:
            raise ValidationError(f"dt must be positive, got {dt}")
        if isinstance(operator, DiffusionOperator):
            op = operator
        else:
            op = DiffusionOperator.from_matrix(operator)
        n = op.n_nodes
        mask = np.asarray(boundary_mask, dtype=bool).reshape(-1)
        if mask.shape != (n,):
            raise ValidationError(f"boundary mask must have length {n}")

        self.dt = dt
        self.boundary = mask
        self.boundary_value = boundary_value
        self.tol = tol
        self.max_iter = max_iter
        self.free = np.flatnonzero(~mask & ~op.frozen)
        self.held = np.flatnonzero(~mask & op.frozen)
        self.known = np.flatnonzero(mask | op.frozen)

        K = op.matrix
        s_free = op.metric[self.free]
        K_ff = K[self.free][:, self.free]
        self._K_free_rows = K[self.free]
        self._K_fk = K[self.free][:, self.known]
        self._s_free = s_free
        lhs = sp.diags(s_free) - 0.5 * dt * (sp.diags(s_free) @ K_ff)
        # exact symmetry for CG; the product is symmetric up to rounding
        self.system = sp.csr_matrix(0.5 * (lhs + lhs.T))

    def step(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        u_next = u.copy()
        u_next[self.boundary] = self.boundary_value
        if self.free.size == 0:
            return u_next
        half = 0.5 * self.dt
        rhs = u[self.free] + half * (self._K_free_rows @ u)
        rhs = rhs + half * (self._K_fk @ u_next[self.known])
        u_next[self.free] = solve_sparse_spd(
            self.system, self._s_free * rhs, tol=self.tol, max_iter=self.max_iter, x0=u[self.free]
        )
        return u_next


def cn_step(
    u: Any,
    L_diff: Union[DiffusionOperator, Any],
    dt: float,
    boundary_mask: Any = None,
    boundary_value: float = 0.0,
    tol: float = 1e-10,
    max_iter: Optional[int] = None,
) -> np.ndarray:
    """
    One step of (I - dt/2 K) u+ = (I + dt/2 K) u with boundary rows pinned.

    ``L_diff`` is a DiffusionOperator or a raw operator such as the generator
    Laplacian D^-1 (A - D); its metric is recovered from the row scaling.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    mask = np.zeros(u.shape[0], dtype=bool) if boundary_mask is None else boundary_mask
    stepper = CrankNicolsonStepper(L_diff, dt, mask, boundary_value, tol, max_iter)
    return stepper.step(u)


def cn_rollout(
    graph: GraphSample,
    variant: Union[str, Variant] = Variant.IRREGULAR,
    T: float = 1.0,
    n_t: int = 100,
    normalized: bool = True,
    boundary_value: float = 0.0,
    tol: float = 1e-10,
    max_iter: Optional[int] = None,
) -> Trajectory:
    """Crank-Nicolson trajectory from u0 on [0, T] with n_t uniform steps."""
    if T <= 0:
        raise ValidationError(f"T must be positive, got {T}")
    if n_t < 1:
        raise ValidationError(f"n_t must be at least 1, got {n_t}")
    graph.require_interior()
    dt = T / n_t
    op = diffusion_operator(graph, variant, normalized)
    stepper = CrankNicolsonStepper(op, dt, graph.boundary_mask, boundary_value, tol, max_iter)

    u = graph.u0.astype(np.float64).copy()
    u[graph.boundary_mask] = boundary_value
    states = [u]
    for _ in range(n_t):
        u = stepper.step(u)
        if not np.all(np.isfinite(u)):
            raise NumericalError("Crank-Nicolson produced a non-finite state")
        states.append(u)
    return Trajectory(times=np.linspace(0.0, T, n_t + 1), states=np.asarray(states))
