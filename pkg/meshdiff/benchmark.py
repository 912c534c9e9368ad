"""Benchmark runner: trains or loads each model, rolls out, and scores against CN."""

import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .cache import ParamsCache
from .config import AppConfig, ModelConfig, TrainConfig
from .errors import ValidationError
from .formatter import (
    CURVE_COLUMNS,
    LOSS_COLUMNS,
    METRIC_COLUMNS,
    curve_rows,
    loss_rows,
    metrics_rows,
    save_line_plot,
    write_csv,
)
from .metrics import error_curve, l2_norm_error, mae, mse, pde_residual_time
from .models import (
    GraphSample,
    LossBreakdown,
    MetricsReport,
    ModelKind,
    ModelParams,
    Trajectory,
    Variant,
)
from .networks import GraphContext, euler_rollout, init_params
from .solver import cn_rollout
from .training import Trainer
from .utils import stable_digest

MODEL_ROSTER = ("ocgnn", "ocgnn-untrained", "gcn", "mlp", "mlp-data", "cn-irregular", "cn-pde")

_LEARNED = {
    "ocgnn": (ModelKind.OCGNN, "physics"),
    "gcn": (ModelKind.GCN, "physics"),
    "mlp": (ModelKind.MLP, "physics"),
    "mlp-data": (ModelKind.MLP, "data"),
}


class BenchmarkResult:
    """Everything one benchmark run produced."""

    def __init__(self):
        self.reports: List[MetricsReport] = []
        self.losses: List[list] = []
        self.curves: List[list] = []
        self.histories: Dict[Tuple[str, str], List[LossBreakdown]] = {}


class BenchmarkRunner:
    """Scores a roster of models on a set of graph samples."""

    def __init__(
        self,
        config: Optional[AppConfig] = None,
        output_dir: Union[str, Path, None] = None,
        use_cache: Optional[bool] = None,
        cache: Optional[ParamsCache] = None,
        verbose: bool = False,
        log_callback: Callable[[str], None] = None,
        progress_callback: Callable[[int, int], None] = None,
    ):
        self.config = config or AppConfig()
        self.output_dir = Path(output_dir) if output_dir is not None else None
        if use_cache is None:
            use_cache = self.config.benchmark.use_cache
        self.cache = cache if cache is not None else (ParamsCache() if use_cache else None)
        self.verbose = verbose
        self.log_callback = log_callback
        self.progress_callback = progress_callback

    def _log(self, message: str):
        if self.verbose and self.log_callback:
            self.log_callback(message)

    def _check_roster(self, models: Sequence[str]) -> None:
        unknown = [m for m in models if m not in MODEL_ROSTER]
        if unknown:
            raise ValidationError(f"unknown benchmark models {unknown}; choose from {MODEL_ROSTER}")

    def trained_params(
        self, name: str, graph: GraphSample, model: str, seed: int
    ) -> Tuple[ModelParams, List[LossBreakdown]]:
        """Train one roster entry, or load it from the cache."""
        kind, supervision = _LEARNED[model]
        cfg = self.config
        model_cfg = cfg.model.model_copy(update={"kind": kind, "seed": seed})
        train_cfg = cfg.train.model_copy(
            update={
                "supervision": supervision,
                "seed": seed,
                "reference_variant": cfg.benchmark.reference,
            }
        )
        key = stable_digest(
            graph.to_json(),
            model_cfg.model_dump(mode="json"),
            train_cfg.model_dump(mode="json"),
        )
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                self._log(f"[{name}/{model}] loaded trained parameters from cache")
                return hit
        trainer = Trainer(
            graph,
            kind,
            TrainConfig.model_validate(train_cfg.model_dump()),
            ModelConfig.model_validate(model_cfg.model_dump()),
            verbose=self.verbose,
            log_callback=self.log_callback,
        )
        params, history = trainer.train()
        if self.cache is not None:
            self.cache.set(key, params, history, sample_name=name)
        return params, history

    def trajectory_for(
        self, name: str, graph: GraphSample, ctx: GraphContext, model: str, seed: int
    ) -> Tuple[Trajectory, List[LossBreakdown]]:
        cn = self.config.cn
        if model in ("cn-irregular", "cn-pde"):
            variant = Variant.IRREGULAR if model == "cn-irregular" else Variant.PDE
            traj = cn_rollout(
                graph, variant, cn.T, cn.nt, cn.normalized, cn.boundary_value, cn.tol, cn.max_iter
            )
            return traj, []
        if model == "ocgnn-untrained":
            model_cfg = self.config.model.model_copy(update={"seed": seed})
            params = init_params(model_cfg, ModelKind.OCGNN)
            history: List[LossBreakdown] = []
        else:
            params, history = self.trained_params(name, graph, model, seed)
        traj = euler_rollout(ctx, params, cn.T, cn.nt, boundary_value=cn.boundary_value)
        return traj, history

    def run(
        self,
        samples: Sequence[Tuple[str, GraphSample]],
        models: Optional[Sequence[str]] = None,
        reference: Optional[Union[str, Variant]] = None,
    ) -> BenchmarkResult:
        """
        Score every (sample, model, seed); CSVs and plots are written to ``output_dir``
        even when a later entry fails.
        """
        cfg = self.config
        models = list(models or cfg.benchmark.models)
        self._check_roster(models)
        ref_variant = Variant(reference or cfg.benchmark.reference)
        seeds = cfg.benchmark.seeds
        result = BenchmarkResult()
        total = len(samples) * len(models) * len(seeds)
        done = 0
        try:
            for name, graph in samples:
                graph.require_interior()
                ctx = GraphContext.from_graph(graph)
                ref = cn_rollout(
                    graph,
                    ref_variant,
                    cfg.cn.T,
                    cfg.cn.nt,
                    cfg.cn.normalized,
                    cfg.cn.boundary_value,
                    cfg.cn.tol,
                    cfg.cn.max_iter,
                )
                self._log(f"[{name}] reference cn-{ref_variant.value}: {graph.n_nodes} nodes")
                for model in models:
                    for seed in seeds:
                        label = model if len(seeds) == 1 else f"{model}/seed{seed}"
                        start = time.perf_counter()
                        traj, history = self.trajectory_for(name, graph, ctx, model, seed)
                        elapsed = time.perf_counter() - start
                        report = MetricsReport(
                            mesh=name,
                            model=label,
                            reference=f"cn-{ref_variant.value}",
                            mae=mae(traj.final, ref.final),
                            mse=mse(traj.final, ref.final),
                            l2_norm=l2_norm_error(traj.final, ref.final),
                            pde_residual_time=pde_residual_time(traj, graph, ref_variant),
                            runtime_seconds=elapsed,
                        )
                        result.reports.append(report)
                        result.curves += curve_rows(
                            name, label, report.reference, traj.times, error_curve(traj, ref)
                        )
                        if history:
                            result.histories[(name, label)] = history
                            result.losses += loss_rows(name, label, history)
                        self._log(
                            f"[{name}/{label}] L2={report.l2_norm:.3e} "
                            f"R_time={report.pde_residual_time:.3e} ({elapsed:.1f}s)"
                        )
                        done += 1
                        if self.progress_callback:
                            self.progress_callback(done, total)
        finally:
            if self.output_dir is not None:
                self.write_outputs(result)
        return result

    def write_outputs(self, result: BenchmarkResult) -> None:
        out = self.output_dir
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "metrics.csv", METRIC_COLUMNS, metrics_rows(result.reports))
        write_csv(out / "losses.csv", LOSS_COLUMNS, result.losses)
        write_csv(out / "error_curves.csv", CURVE_COLUMNS, result.curves)

        for (mesh, model), history in result.histories.items():
            epochs = [h.epoch for h in history]
            series = {
                "total": (epochs, [h.total for h in history]),
                "pde": (epochs, [h.l_pde for h in history]),
                "bc": (epochs, [h.l_bc for h in history]),
            }
            if any(h.l_pt > 0 for h in history):
                series["p-tensor"] = (epochs, [h.l_pt for h in history])
            if any(h.l_data > 0 for h in history):
                series["data"] = (epochs, [h.l_data for h in history])
            save_line_plot(
                out / f"losses_{_slug(mesh)}_{_slug(model)}.svg",
                series,
                title=f"{mesh} / {model}",
                xlabel="epoch",
                ylabel="loss",
                log_y=True,
            )

        by_mesh: Dict[str, Dict[str, Tuple[list, list]]] = {}
        for mesh, model, _, _, t, e in result.curves:
            xs, ys = by_mesh.setdefault(mesh, {}).setdefault(model, ([], []))
            xs.append(t)
            ys.append(e)
        for mesh, series in by_mesh.items():
            save_line_plot(
                out / f"error_{_slug(mesh)}.svg",
                series,
                title=f"{mesh}: normalized L2 error",
                xlabel="t",
                ylabel="error",
                log_y=True,
            )
        self._log(f"Wrote {len(result.reports)} metric rows to {out}")


def median_by_model(reports: Sequence[MetricsReport], field: str) -> Dict[str, float]:
    """Median of one metric per roster entry, pooling the ``model/seedN`` labels."""
    pooled: Dict[str, List[float]] = {}
    for report in reports:
        model = report.model.split("/seed")[0]
        pooled.setdefault(model, []).append(float(getattr(report, field)))
    return {model: float(np.median(values)) for model, values in pooled.items()}


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in text)
