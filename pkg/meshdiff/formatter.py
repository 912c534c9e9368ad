"""Output formatters for meshdiff: rich tables, CSV files and SVG line plots."""

import csv
import json
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from rich.console import Console
from rich.table import Table

from .models import CheckResult, CheckStatus, LossBreakdown, MetricsReport
from .utils import format_float

console = Console()

PathLike = Union[str, Path]

METRIC_COLUMNS = ["mesh", "model", "reference", "mae", "mse", "l2_norm", "pde_residual_time"]
LOSS_COLUMNS = [
    "mesh",
    "model",
    "epoch",
    "total",
    "l_pde",
    "l_bc",
    "l_ic",
    "l_pt",
    "l_data",
    "lambda_pde",
    "lambda_bc",
    "lambda_ic",
    "lambda_pt",
    "scale_s",
]
CURVE_COLUMNS = ["mesh", "model", "reference", "step", "time", "l2_norm_error"]

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]


def _cell(value) -> str:
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def write_csv(path: PathLike, columns: Sequence[str], rows: Iterable[Sequence]) -> int:
    """Write a header plus rows; returns the number of records written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
            count += 1
    return count


def metrics_rows(reports: Iterable[MetricsReport]) -> List[list]:
    return [[getattr(r, c) for c in METRIC_COLUMNS] for r in reports]


def loss_rows(mesh: str, model: str, history: Iterable[LossBreakdown]) -> List[list]:
    rows = []
    for h in history:
        rows.append(
            [mesh, model, h.epoch, h.total, h.l_pde, h.l_bc, h.l_ic, h.l_pt, h.l_data]
            + list(h.lambdas)
            + [h.scale_s]
        )
    return rows


def curve_rows(mesh: str, model: str, reference: str, times, errors) -> List[list]:
    return [
        [mesh, model, reference, step, float(t), float(e)]
        for step, (t, e) in enumerate(zip(times, errors))
    ]


def write_json(path: PathLike, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


# --- console ---


def display_metrics(reports: List[MetricsReport]) -> None:
    """Display benchmark metrics as a rich table."""
    console.print("\n[bold]BENCHMARK[/bold]")
    console.print("━" * 60)
    if not reports:
        console.print("No results to display.")
        return

    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Mesh")
    table.add_column("Model")
    table.add_column("Reference")
    for name in ("MAE", "MSE", "L2 (norm)", "R time", "Seconds"):
        table.add_column(name, justify="right")
    for r in reports:
        table.add_row(
            r.mesh,
            r.model,
            r.reference,
            f"{r.mae:.3e}",
            f"{r.mse:.3e}",
            f"{r.l2_norm:.3e}",
            f"{r.pde_residual_time:.3e}",
            f"{r.runtime_seconds:.1f}",
        )
    console.print(table)


def display_checks(results: List[CheckResult]) -> None:
    """Pass/fail table of the invariant suite."""
    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Check", width=34)
    table.add_column("Status", width=8)
    table.add_column("Value", justify="right")
    table.add_column("Detail")
    for r in results:
        if r.status == CheckStatus.PASSED:
            status = "[green]pass[/green]"
        elif r.status == CheckStatus.FAILED:
            status = "[red]FAIL[/red]"
        else:
            status = "[yellow]error[/yellow]"
        value = "" if r.value is None else f"{r.value:.3e}"
        table.add_row(r.name, status, value, r.detail)
    console.print(table)

    passed = sum(1 for r in results if r.status == CheckStatus.PASSED)
    console.print(f"\n{passed}/{len(results)} checks passed")


def display_training(history: List[LossBreakdown]) -> None:
    """First and last epoch of a training run."""
    if not history:
        console.print("No epochs were run.")
        return
    first, last = history[0], history[-1]
    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Epoch", justify="right")
    for name in ("Total", "PDE", "BC", "IC", "PT", "Data"):
        table.add_column(name, justify="right")
    for h in (first, last) if len(history) > 1 else (first,):
        table.add_row(
            str(h.epoch),
            *(f"{v:.3e}" for v in (h.total, h.l_pde, h.l_bc, h.l_ic, h.l_pt, h.l_data)),
        )
    console.print(table)


# --- svg ---


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    return np.linspace(lo, hi, n)


def render_line_plot(
    series: Dict[str, Tuple[Sequence[float], Sequence[float]]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    log_y: bool = False,
    width: int = 640,
    height: int = 400,
) -> str:
    """SVG document with one polyline per named series."""
    margin_l, margin_r, margin_t, margin_b = 70, 150, 40, 50
    plot_w, plot_h = width - margin_l - margin_r, height - margin_t - margin_b

    prepared = {}
    for name, (xs, ys) in series.items():
        x = np.asarray(xs, dtype=np.float64)
        y = np.asarray(ys, dtype=np.float64)
        keep = np.isfinite(x) & np.isfinite(y)
        if log_y:
            keep &= y > 0
        if np.any(keep):
            x, y = x[keep], y[keep]
            prepared[name] = (x, np.log10(y) if log_y else y)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{_escape(title)}</text>',
    ]
    if prepared:
        all_x = np.concatenate([x for x, _ in prepared.values()])
        all_y = np.concatenate([y for _, y in prepared.values()])
        x_lo, x_hi = float(all_x.min()), float(all_x.max())
        y_lo, y_hi = float(all_y.min()), float(all_y.max())
        if x_hi == x_lo:
            x_hi = x_lo + 1.0
        if y_hi == y_lo:
            y_lo, y_hi = y_lo - 0.5, y_hi + 0.5

        def px(x):
            return margin_l + (x - x_lo) / (x_hi - x_lo) * plot_w

        def py(y):
            return margin_t + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

        parts.append(
            f'<rect x="{margin_l}" y="{margin_t}" width="{plot_w}" height="{plot_h}" '
            'fill="none" stroke="black"/>'
        )
        for t in _ticks(y_lo, y_hi):
            label = f"1e{t:.1f}" if log_y else f"{t:.3g}"
            parts.append(
                f'<text x="{margin_l - 6}" y="{py(t) + 4:.1f}" text-anchor="end" '
                f'font-size="10" font-family="sans-serif">{label}</text>'
            )
        for t in _ticks(x_lo, x_hi):
            parts.append(
                f'<text x="{px(t):.1f}" y="{margin_t + plot_h + 16}" text-anchor="middle" '
                f'font-size="10" font-family="sans-serif">{t:.3g}</text>'
            )
        for i, (name, (x, y)) in enumerate(prepared.items()):
            color = PALETTE[i % len(PALETTE)]
            points = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            parts.append(
                f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>'
            )
            ly = margin_t + 14 + 18 * i
            lx = margin_l + plot_w + 12
            parts.append(
                f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" '
                'stroke-width="2"/>'
            )
            parts.append(
                f'<text x="{lx + 24}" y="{ly + 4}" font-size="11" '
                f'font-family="sans-serif">{_escape(name)}</text>'
            )
    parts.append(
        f'<text x="{margin_l + plot_w / 2:.1f}" y="{height - 10}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif">{_escape(xlabel)}</text>'
    )
    parts.append(
        f'<text x="16" y="{margin_t + plot_h / 2:.1f}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 16 {margin_t + plot_h / 2:.1f})">'
        f"{_escape(ylabel)}</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_line_plot(path: PathLike, series, **kwargs) -> None:
    Path(path).write_text(render_line_plot(series, **kwargs), encoding="utf-8")


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
