"""Physics-informed losses, adaptive loss weights, Adam, and the training loop."""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import DiffValue, Tape
from .config import ModelConfig, TrainConfig
from .errors import NumericalError, ValidationError
from .graph import IncidenceMatrix
from .models import GraphSample, LossBreakdown, ModelKind, ModelParams, Trajectory
from .networks import GraphContext, as_context, euler_rollout, init_params, model_forward
from .solver import cn_rollout
from .utils import make_rng

N_TERMS = 4


def _value(x) -> DiffValue:
    return x if isinstance(x, DiffValue) else ad.const(x)


def _incidence(B: Union[IncidenceMatrix, sp.spmatrix]) -> sp.csr_matrix:
    return B.matrix if isinstance(B, IncidenceMatrix) else sp.csr_matrix(B)


# --- loss terms ---


def loss_pde(
    f_dot,
    f,
    graph: Union[GraphSample, GraphContext],
    scale: float = 1.0,
    mask: Optional[np.ndarray] = None,
) -> DiffValue:
    """scale * mean((f_dot - D L f)^2), over ``mask`` nodes when given."""
    ctx = as_context(graph)
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    residual = _value(f_dot) - ad.const(ctx.diffusion @ f)
    if mask is not None:
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return ad.const(0.0)
        residual = ad.gather(residual, idx)
    return ad.mean(residual * residual) * float(scale)


def loss_bc(values: Sequence, boundary_mask, boundary_value: float = 0.0) -> DiffValue:
    """Mean squared deviation from the Dirichlet value over boundary nodes and all states."""
    idx = np.flatnonzero(np.asarray(boundary_mask, dtype=bool))
    if idx.size == 0 or len(values) == 0:
        return ad.const(0.0)
    total = ad.const(0.0)
    for v in values:
        dev = ad.gather(_value(v), idx) - boundary_value
        total = total + ad.squared_norm(dev)
    return total * (1.0 / (idx.size * len(values)))


def loss_ic(f_at_t0, u0, mask: Optional[np.ndarray] = None) -> DiffValue:
    """Mean squared deviation of the t = 0 state from u0."""
    dev = _value(f_at_t0) - ad.const(np.asarray(u0, dtype=np.float64))
    if mask is not None:
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return ad.const(0.0)
        dev = ad.gather(dev, idx)
    return ad.mean(dev * dev)


def ptensor_residuals(
    f_dot, g_dot, f, g, B: Union[IncidenceMatrix, sp.spmatrix]
) -> Tuple[DiffValue, DiffValue]:
    """R_f = f_dot - B^T g and R_g = g_dot + B f."""
    Bm = _incidence(B)
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    f_dot, g_dot = _value(f_dot), _value(g_dot)
    n_edges, n_nodes = Bm.shape
    if g.shape[0] != n_edges or g_dot.shape[0] != n_edges:
        raise ValidationError(
            f"edge field has {g.shape[0]} / {g_dot.shape[0]} entries, incidence has {n_edges} edges"
        )
    if f.shape[0] != n_nodes or f_dot.shape[0] != n_nodes:
        raise ValidationError(f"node field length does not match incidence with {n_nodes} nodes")
    return f_dot - ad.const(Bm.T @ g), g_dot + ad.const(Bm @ f)


def loss_ptensor(
    f_dot,
    g_dot,
    f,
    g,
    B: Union[IncidenceMatrix, sp.spmatrix],
    alpha_f: float = 1.0,
    alpha_g: float = 1.0,
) -> DiffValue:
    """mean(R_f^2) / alpha_f^2 + mean(R_g^2) / alpha_g^2."""
    r_f, r_g = ptensor_residuals(f_dot, g_dot, f, g, B)
    return ad.mean(r_f * r_f) * (1.0 / alpha_f**2) + ad.mean(r_g * r_g) * (1.0 / alpha_g**2)


def update_lambdas(
    losses: Sequence[float],
    previous: Sequence[float] = (1.0, 1.0, 1.0, 1.0),
    lambda_min: float = 0.1,
    lambda_max: float = 10.0,
    active: Optional[Sequence[bool]] = None,
) -> Tuple[float, ...]:
    """
    Inverse-logarithmic weights: lambda_k ~ 1 / log(e + l_k / l_bar).

    Weights of active terms are renormalized to sum to the number of active terms and
    clipped to [lambda_min, lambda_max]; inactive terms get 0. When every active loss is
    zero there is nothing to balance and the active terms keep their ``previous`` weights.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if np.any(losses < 0) or not np.all(np.isfinite(losses)):
        raise ValidationError("losses must be finite and non-negative")
    if len(previous) != losses.size:
        raise ValidationError("previous lambdas and losses differ in length")
    on = np.ones(losses.size, bool) if active is None else np.asarray(active, dtype=bool)
    n_on = int(on.sum())
    out = np.zeros(losses.size)
    if n_on == 0:
        return tuple(out.tolist())
    mean = losses[on].mean()
    if mean <= 0.0:
        out[on] = np.asarray(previous, dtype=np.float64)[on]
    else:
        raw = 1.0 / np.log(math.e + losses[on] / mean)
        out[on] = raw * (n_on / raw.sum())
    out[on] = np.clip(out[on], lambda_min, lambda_max)
    return tuple(out.tolist())


def energy_terms(f, g, f_dot, g_dot, B: Union[IncidenceMatrix, sp.spmatrix]) -> Dict[str, float]:
    """
    dH/dt estimate f.f_dot + g.g_dot, its Cauchy-Schwarz bound, the residual inner
    product f.R_f + g.R_g and the skew term f.B^T g - g.B f.
    """
    Bm = _incidence(B)
    f, g = np.asarray(f, dtype=np.float64), np.asarray(g, dtype=np.float64)
    fd, gd = np.asarray(f_dot, dtype=np.float64), np.asarray(g_dot, dtype=np.float64)
    r_f = fd - Bm.T @ g
    r_g = gd + Bm @ f
    return {
        "rate": float(f @ fd + g @ gd),
        "residual": float(f @ r_f + g @ r_g),
        "bound": float(
            np.linalg.norm(f) * np.linalg.norm(r_f) + np.linalg.norm(g) * np.linalg.norm(r_g)
        ),
        "skew": float(f @ (Bm.T @ g) - g @ (Bm @ f)),
    }


# --- optimizer ---


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(
        self,
        size: int,
        lr: float = 3e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if grad.shape != self.m.shape:
            raise ValidationError(f"gradient has shape {grad.shape}, expected {self.m.shape}")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- training loop ---


@dataclass
class RunningScale:
    """Exponential moving average seeded with its first observation."""

    momentum: float
    value: Optional[float] = None

    def update(self, x: float) -> float:
        if self.value is None:
            self.value = x
        else:
            self.value += (1.0 - self.momentum) * (x - self.value)
        return self.value


@dataclass
class EpochTerms:
    """Taped total loss of one epoch plus the float components behind it."""

    total: DiffValue
    parts: Dict[str, float]
    lambdas: Tuple[float, ...]
    scale: float
    f_dot_rms: float
    lap_rms: float
    energy: Dict[str, float] = field(default_factory=dict)


def weight_views(theta: DiffValue, params: ModelParams) -> Dict[str, DiffValue]:
    """Named tensors as slices of a flat taped vector, in ``params`` order."""
    views, offset = {}, 0
    for name, arr in params.tensors.items():
        piece = ad.slice_flat(theta, offset, offset + arr.size)
        views[name] = ad.reshape(piece, arr.shape)
        offset += arr.size
    return views


class Trainer:
    """Trains one model on one graph with physics-informed (or data) supervision."""

    def __init__(
        self,
        graph: GraphSample,
        kind: Union[str, ModelKind] = ModelKind.OCGNN,
        config: Optional[TrainConfig] = None,
        model_config: Optional[ModelConfig] = None,
        params: Optional[ModelParams] = None,
        verbose: bool = False,
        log_callback: Callable[[str], None] = None,
        progress_callback: Callable[[int, int], None] = None,
    ):
        self.config = config or TrainConfig()
        self.kind = ModelKind(kind)
        graph.require_interior()
        self.graph = graph
        self.ctx = GraphContext.from_graph(graph)
        model_cfg = model_config or ModelConfig(kind=self.kind)
        if params is None:
            self.params = init_params(model_cfg, self.kind)
        else:
            self.params = params.copy_params()
        if self.params.kind != self.kind:
            raise ValidationError(
                f"parameters are for {self.params.kind.value}, not {self.kind.value}"
            )
        self.verbose = verbose
        self.log_callback = log_callback
        self.progress_callback = progress_callback

        cfg = self.config
        self.dt = cfg.T / cfg.nt
        self.times = np.linspace(0.0, cfg.T, cfg.nt + 1)
        self.interior = np.flatnonzero(graph.interior_mask)
        self.boundary = np.flatnonzero(graph.boundary_mask)
        self.rng = make_rng(cfg.seed)
        self.optimizer = Adam(self.params.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.has_edges = self.kind == ModelKind.OCGNN and cfg.use_ptensor
        self.active = (True, True, True, self.has_edges)
        self.lambdas = tuple(lam if on else 0.0 for lam, on in zip(cfg.lambda_init, self.active))
        self.scale_f = RunningScale(cfg.scale_momentum)
        self.scale_lap = RunningScale(cfg.scale_momentum)
        self.alpha_f = RunningScale(cfg.norm_momentum)
        self.alpha_g = RunningScale(cfg.norm_momentum)
        self.reference: Optional[Trajectory] = None
        if cfg.supervision == "data":
            self.reference = cn_rollout(
                graph, cfg.reference_variant, cfg.T, cfg.nt, boundary_value=cfg.boundary_value
            )

    def _log(self, message: str):
        if self.verbose and self.log_callback:
            self.log_callback(message)

    def rollout(self, params: Optional[ModelParams] = None) -> Trajectory:
        """Detached Euler rollout of the current (or given) parameters."""
        cfg = self.config
        return euler_rollout(
            self.ctx, params or self.params, cfg.T, cfg.nt, boundary_value=cfg.boundary_value
        )

    def sample_indices(self) -> np.ndarray:
        """Time indices where the dynamics are evaluated; index 0 is always included."""
        nt, k = self.config.nt, self.config.n_samples
        if k is None or k >= nt:
            return np.arange(nt)
        rest = self.rng.choice(np.arange(1, nt), size=k - 1, replace=False)
        return np.sort(np.concatenate([[0], rest]))

    def states_for(self, rollout: Trajectory) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        if self.reference is not None:
            ref = self.reference
            g = None
            if self.kind == ModelKind.OCGNN:
                g = np.asarray([self.ctx.incidence.grad(u) for u in ref.states])
            return ref.states, g
        return rollout.states, rollout.edge_states

    def assemble(
        self,
        theta: DiffValue,
        states: np.ndarray,
        edge_states: Optional[np.ndarray],
        indices: Sequence[int],
        lambdas: Optional[Sequence[float]] = None,
        scale: Optional[float] = None,
        alphas: Optional[Tuple[float, float]] = None,
    ) -> EpochTerms:
        """
        Build the taped loss on frozen states.

        With ``scale``/``alphas`` left as None the running estimates are updated from
        this pass and used; passing them freezes the loss for gradient checks. With
        ``lambdas`` left as None the adaptive weights are recomputed from this pass's
        loss values before the total is formed, so the recorded total uses them.
        """
        cfg = self.config
        ctx = self.ctx
        weights = weight_views(theta, self.params)
        B = ctx.incidence.matrix
        interior = self.graph.interior_mask

        raw_pde, l_pt, l_data = ad.const(0.0), ad.const(0.0), ad.const(0.0)
        bc_values: List[DiffValue] = []
        sq_f, sq_lap, sq_bf, count = 0.0, 0.0, 0.0, 0
        energy = {"rate": 0.0, "residual": 0.0, "bound": 0.0, "skew": 0.0}
        pt_pairs = []
        for k in indices:
            f = states[k]
            f_dot, g_dot = model_forward(ctx, f, float(self.times[k]), self.params, weights)
            lap = ctx.diffusion @ f
            raw_pde = raw_pde + loss_pde(f_dot, f, ctx, mask=interior)
            nxt = ad.const(f) + f_dot * self.dt
            bc_values.append(nxt)
            sq_f += float(np.mean(f_dot.data[self.interior] ** 2))
            sq_lap += float(np.mean(lap[self.interior] ** 2))
            count += 1
            if self.reference is not None:
                dev = ad.gather(nxt - ad.const(states[k + 1]), self.interior)
                l_data = l_data + ad.mean(dev * dev)
            if g_dot is not None and edge_states is not None:
                g = edge_states[k]
                sq_bf += float(np.mean((B @ f) ** 2)) if B.shape[0] else 0.0
                pt_pairs.append((f_dot, g_dot, f, g))
                for key, v in energy_terms(f, g, f_dot.data, g_dot.data, B).items():
                    energy[key] += v / len(indices)

        n = max(count, 1)
        f_rms, lap_rms = math.sqrt(sq_f / n), math.sqrt(sq_lap / n)
        if scale is None:
            if cfg.pde_scaling:
                s_f = self.scale_f.update(f_rms)
                s_l = self.scale_lap.update(lap_rms)
                scale = 1.0 / (s_f * s_l + cfg.scale_epsilon)
            else:
                scale = 1.0
        if alphas is None:
            if cfg.normalize_ptensor and pt_pairs:
                alphas = (
                    max(self.alpha_f.update(f_rms), cfg.scale_epsilon),
                    max(self.alpha_g.update(math.sqrt(sq_bf / n)), cfg.scale_epsilon),
                )
            else:
                alphas = (1.0, 1.0)

        if self.has_edges and pt_pairs:
            for f_dot, g_dot, f, g in pt_pairs:
                l_pt = l_pt + loss_ptensor(f_dot, g_dot, f, g, B, *alphas)
            l_pt = l_pt * (1.0 / len(pt_pairs))
        l_pde = raw_pde * (scale / n)
        l_bc = loss_bc(bc_values, self.graph.boundary_mask, cfg.boundary_value)
        l_ic = loss_ic(states[0], self.graph.u0, mask=interior)
        if self.reference is not None:
            l_data = l_data * (1.0 / n)

        if lambdas is None:
            losses = [term.item() for term in (l_pde, l_bc, l_ic, l_pt)]
            self.lambdas = update_lambdas(
                losses, self.lambdas, cfg.lambda_min, cfg.lambda_max, active=self.active
            )
            lambdas = self.lambdas
        lam = tuple(float(x) for x in lambdas)
        total = l_data
        for weight, term in zip(lam, (l_pde, l_bc, l_ic, l_pt)):
            if weight != 0.0:
                total = total + term * weight
        parts = {
            "l_pde": l_pde.item(),
            "l_bc": l_bc.item(),
            "l_ic": l_ic.item(),
            "l_pt": l_pt.item(),
            "l_data": l_data.item(),
        }
        return EpochTerms(
            total=total,
            parts=parts,
            lambdas=lam,
            scale=scale,
            f_dot_rms=f_rms,
            lap_rms=lap_rms,
            energy=energy,
        )

    def loss_function(
        self, rollout: Optional[Trajectory] = None, scale: float = 1.0
    ) -> Callable[[DiffValue], DiffValue]:
        """Scalar loss of the flat parameter vector on frozen states, for grad_check."""
        rollout = rollout or self.rollout()
        states, edge_states = self.states_for(rollout)
        indices = np.arange(self.config.nt)
        lambdas = self.lambdas

        def fn(theta: DiffValue) -> DiffValue:
            return self.assemble(
                theta, states, edge_states, indices, lambdas, scale=scale, alphas=(1.0, 1.0)
            ).total

        return fn

    def _breakdown(self, epoch: int, terms: EpochTerms) -> LossBreakdown:
        p = terms.parts
        data_mode = self.reference is not None
        lambdas = (0.0, 0.0, 0.0, 0.0) if data_mode else terms.lambdas
        names = ("l_pde", "l_bc", "l_ic", "l_pt")
        weighted = math.fsum(lam * p[k] for lam, k in zip(lambdas, names))
        total = weighted + p["l_data"]
        if not math.isfinite(total):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        return LossBreakdown(
            epoch=epoch,
            l_pde=p["l_pde"],
            l_bc=p["l_bc"],
            l_ic=p["l_ic"],
            l_pt=p["l_pt"],
            l_data=p["l_data"],
            lambdas=lambdas,
            total=total,
            scale_s=terms.scale,
            f_dot_rms=terms.f_dot_rms,
            lap_rms=terms.lap_rms,
            energy_rate=terms.energy.get("rate", 0.0),
            energy_bound=terms.energy.get("bound", 0.0),
            energy_skew=terms.energy.get("skew", 0.0),
        )

    def train_epoch(self, epoch: int) -> LossBreakdown:
        cfg = self.config
        data_mode = self.reference is not None
        try:
            rollout = None if data_mode else self.rollout()
        except NumericalError as e:
            raise NumericalError(f"epoch {epoch}: {e}") from e
        states, edge_states = self.states_for(rollout)
        if data_mode:
            lambdas = (0.0, 0.0, 0.0, 0.0)
        else:
            lambdas = None if cfg.adaptive_lambdas else self.lambdas

        tape = Tape()
        theta = tape.variable(self.params.flatten(), name="theta")
        terms = self.assemble(theta, states, edge_states, self.sample_indices(), lambdas)
        record = self._breakdown(epoch, terms)
        if not math.isfinite(terms.total.item()):
            raise NumericalError(f"non-finite loss at epoch {epoch}")

        if terms.total.tape is tape:
            tape.backward(terms.total)
            grad = theta.grad if theta.grad is not None else np.zeros(self.params.size)
        else:
            grad = np.zeros(self.params.size)
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient at epoch {epoch}")
        self.params = self.params.unflatten(self.optimizer.step(self.params.flatten(), grad))
        return record

    def train(self) -> Tuple[ModelParams, List[LossBreakdown]]:
        cfg = self.config
        history: List[LossBreakdown] = []
        self._log(
            f"Training {self.kind.value} on {self.graph.n_nodes} nodes / "
            f"{self.graph.n_edges} edges "
            f"({self.params.size} parameters, {cfg.epochs} epochs, {cfg.supervision} supervision)"
        )
        for epoch in range(cfg.epochs):
            record = self.train_epoch(epoch)
            history.append(record)
            if epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1:
                lam = ", ".join(f"{x:.3f}" for x in record.lambdas)
                self._log(
                    f"epoch {epoch}: total={record.total:.4e} pde={record.l_pde:.3e} "
                    f"bc={record.l_bc:.3e} pt={record.l_pt:.3e} s={record.scale_s:.3e} "
                    f"rms(f_dot)={record.f_dot_rms:.3e} rms(DLf)={record.lap_rms:.3e} "
                    f"lambdas=({lam})"
                )
            if self.progress_callback:
                self.progress_callback(epoch + 1, cfg.epochs)
        return self.params.copy_params(), history


def train(
    graph: GraphSample,
    kind: Union[str, ModelKind] = ModelKind.OCGNN,
    config: Optional[TrainConfig] = None,
    model_config: Optional[ModelConfig] = None,
    params: Optional[ModelParams] = None,
    **kwargs,
) -> Tuple[ModelParams, List[LossBreakdown]]:
    """Train a model; returns the final parameters and one LossBreakdown per epoch."""
    return Trainer(graph, kind, config, model_config, params, **kwargs).train()
