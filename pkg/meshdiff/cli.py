"""Main CLI interface for meshdiff."""

import sys
import time
import traceback
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

import click
from dotenv import load_dotenv
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn

from .config import AppConfig, iter_config_lines, load_config
from .errors import ValidationError

load_dotenv()

console = Console()

EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def _progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
        console=console,
    )


def _log_callback(verbose: bool):
    def log_callback(msg: str):
        if verbose:
            console.print(f"  [dim]{msg}[/dim]")

    return log_callback


@contextmanager
def _handle_errors(verbose: bool):
    """Exit 1 on validation errors and 2 on numerical failures."""
    try:
        yield
    except click.exceptions.Exit:
        raise
    except click.ClickException:
        raise
    except ArithmeticError as e:
        console.print(f"[bold red]Numerical error:[/bold red] {e}")
        if verbose:
            traceback.print_exc()
        sys.exit(EXIT_NUMERICAL)
    except Exception as e:
        console.print(f"[bold red]Error:[/bold red] {e}")
        if verbose:
            traceback.print_exc()
        sys.exit(EXIT_VALIDATION)


def _load_sample(path: str):
    from .models import GraphSample

    return GraphSample.from_json(path)


@click.group(invoke_without_command=True)
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    help="TOML configuration file (defaults to $MESHDIFF_CONFIG)",
)
@click.option("--show-config", is_flag=True, help="Print every effective setting and exit")
@click.option("--verbose", "-v", is_flag=True, help="Show detailed progress logs")
@click.version_option(package_name="meshdiff")
@click.pass_context
def main(ctx, config_path, show_config, verbose):
    """
    Operator-consistent learning of diffusion on irregular meshes.

    Examples:
      meshdiff gen-mesh --output mesh.json
      meshdiff ingest bunny.obj --n 2000 --output bunny.json
      meshdiff solve-cn mesh.json --variant pde --output cn.json
      meshdiff train mesh.json --model ocgnn --epochs 300 --output params.json
      meshdiff benchmark mesh.json bunny.json --output results/
      meshdiff verify --quick
    """
    ctx.ensure_object(dict)
    with _handle_errors(verbose):
        config = load_config(config_path)
    ctx.obj["config"] = config
    ctx.obj["verbose"] = verbose

    if show_config:
        for line in iter_config_lines(config):
            click.echo(line)
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


def _section(ctx, name: str, **overrides):
    config: AppConfig = ctx.obj["config"]
    return config.section(name, **overrides)


# --- data generation ---


@main.command("gen-mesh")
@click.option(
    "--kind",
    type=click.Choice(["physical", "uniform", "jittered", "clustered", "poisson"]),
    default="physical",
    help="Physically driven surface mesh or a synthetic volume cloud",
)
@click.option("--n", type=int, help="Number of nodes")
@click.option("--k", type=int, help="Neighbours per node")
@click.option("--seed", type=int, help="Random seed")
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True)
@click.option("--wound-csv", type=click.Path(dir_okay=False), help="Write the wound-size series")
@click.pass_context
def gen_mesh(ctx, kind, n, k, seed, output, wound_csv):
    """Generate a graph sample on the ellipsoid."""
    from .formatter import write_csv
    from .meshgen import MeshGenerator, generate_point_cloud_mesh

    verbose = ctx.obj["verbose"]
    with _handle_errors(verbose):
        start = time.time()
        if kind == "physical":
            cfg = _section(ctx, "mesh", n=n, k=k, seed=seed)
            with _progress() as progress:
                task = progress.add_task("Healing simulation...", total=cfg.healing.n_steps)
                generator = MeshGenerator(
                    cfg,
                    verbose=verbose,
                    log_callback=_log_callback(verbose),
                    progress_callback=lambda done, total: progress.update(task, completed=done),
                )
                sample, wound = generator.generate()
            if wound_csv:
                rows = zip(wound.steps, wound.times, wound.sum_damage)
                write_csv(wound_csv, ["step", "time", "sum_damage"], rows)
                console.print(f"  Wrote wound series to {wound_csv}")
        else:
            if wound_csv:
                raise ValidationError("--wound-csv only applies to --kind physical")
            cfg = _section(ctx, "cloud", kind=kind, n=n, k=k, seed=seed)
            sample = generate_point_cloud_mesh(cfg)

        sample.to_json(output)
        console.print(
            f"  {sample.n_nodes} nodes, {sample.n_edges} edges, "
            f"{int(sample.boundary_mask.sum())} boundary nodes -> {output}"
        )
        console.print(f"\n✨ Done in {time.time() - start:.1f}s")


@main.command()
@click.argument("mesh_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--n", type=int, help="Number of vertices to keep")
@click.option("--k", type=int, help="Neighbours per node")
@click.option("--seed", type=int, help="Subsampling seed")
@click.option("--name", help="Sample name stored in the metadata")
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def ingest(ctx, mesh_path, n, k, seed, name, output):
    """Convert an OBJ or ASCII PLY mesh into a graph sample."""
    from .meshio import parse_mesh, realmesh_to_graphsample

    verbose = ctx.obj["verbose"]
    with _handle_errors(verbose):
        cfg = _section(ctx, "ingest", n=n, k=k, seed=seed)
        mesh = parse_mesh(mesh_path)
        console.print(f"  Parsed {mesh.n_vertices} vertices, {len(mesh.faces)} triangles")
        sample = realmesh_to_graphsample(
            mesh,
            n=min(cfg.n, mesh.n_vertices) if n is None else cfg.n,
            k=cfg.k,
            seed=cfg.seed,
            rotation=cfg.rotation,
            epsilon=cfg.epsilon,
            diffusivity=cfg.diffusivity,
            name=name or Path(mesh_path).stem,
        )
        sample.to_json(output)
        console.print(
            f"  {sample.n_nodes} nodes, {sample.n_edges} edges, "
            f"{int(sample.boundary_mask.sum())} boundary nodes -> {output}"
        )


# --- solvers ---


@main.command("solve-cn")
@click.argument("sample_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--variant", type=click.Choice(["irregular", "pde"]), help="Edge-weight law")
@click.option("--T", "T", type=float, help="Final time")
@click.option("--nt", type=int, help="Number of time steps")
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def solve_cn(ctx, sample_path, variant, T, nt, output):
    """Crank-Nicolson reference trajectory of a graph sample."""
    from .solver import cn_rollout

    verbose = ctx.obj["verbose"]
    with _handle_errors(verbose):
        cfg = _section(ctx, "cn", variant=variant, T=T, nt=nt)
        sample = _load_sample(sample_path)
        start = time.time()
        traj = cn_rollout(
            sample,
            cfg.variant,
            cfg.T,
            cfg.nt,
            cfg.normalized,
            cfg.boundary_value,
            cfg.tol,
            cfg.max_iter,
        )
        traj.to_json(output)
        console.print(
            f"  cn-{cfg.variant.value}: {traj.n_steps} steps to T={cfg.T}, "
            f"max|u(T)|={abs(traj.final).max():.4g} ({time.time() - start:.1f}s) -> {output}"
        )


@main.command("fd-demo")
@click.option("--nx", type=int, help="Grid points along x")
@click.option("--ny", type=int, help="Grid points along y")
@click.option("--perturb", type=float, help="Interior node jitter as a fraction of the spacing")
@click.option("--D", "D", type=float, help="Diffusivity")
@click.option("--steps", "n_steps", type=int, help="Number of explicit steps")
@click.option("--dt", type=float, help="Time step (defaults to the CFL step)")
@click.option("--seed", type=int, help="Perturbation seed")
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="Per-step CSV")
@click.pass_context
def fd_demo(ctx, nx, ny, perturb, D, n_steps, dt, seed, output):
    """Explicit finite differences on a uniform or perturbed grid."""
    from .fd import cfl_timestep, hot_disc, make_grid, run_fd_diffusion
    from .formatter import write_csv

    verbose = ctx.obj["verbose"]
    with _handle_errors(verbose):
        cfg = _section(
            ctx, "fd", nx=nx, ny=ny, perturb=perturb, D=D, n_steps=n_steps, dt=dt, seed=seed
        )
        grid = make_grid(cfg.nx, cfg.ny, cfg.perturb, cfg.seed)
        step = cfg.dt if cfg.dt is not None else cfl_timestep(grid.dx_mean, grid.dy_mean, cfg.D)
        result = run_fd_diffusion(
            grid,
            cfg.D,
            step,
            cfg.n_steps,
            initial=hot_disc(grid, cfg.disc_radius),
            divergence_factor=cfg.divergence_factor,
            record_every=cfg.record_every,
        )
        if result.diverged:
            console.print(
                f"  [red]Diverged[/red] at step {result.diverged_at} "
                f"(dt={step:.3e}, perturbation {cfg.perturb:.0%})"
            )
        else:
            console.print(
                f"  [green]Stable[/green] for {cfg.n_steps} steps, "
                f"max|u|={result.max_u[-1]:.4g} (dt={step:.3e})"
            )
        if output:
            flux = [0.0] + result.boundary_flux
            rows = zip(
                range(len(result.max_u)), result.max_u, result.heat, flux, result.diverged_flags
            )
            write_csv(output, ["step", "max_u", "heat", "boundary_flux", "diverged"], rows)
            console.print(f"  Wrote per-step diagnostics to {output}")


# --- learning ---


@main.command()
@click.argument("sample_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "kind", type=click.Choice(["ocgnn", "gcn", "mlp"]), help="Model kind")
@click.option("--epochs", type=int, help="Training epochs")
@click.option("--lr", type=float, help="Learning rate")
@click.option("--seed", type=int, help="Initialization and sampling seed")
@click.option(
    "--supervision", type=click.Choice(["physics", "data"]), help="Physics losses or CN data"
)
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True)
@click.option("--losses", type=click.Path(dir_okay=False), help="Per-epoch loss CSV")
@click.pass_context
def train(ctx, sample_path, kind, epochs, lr, seed, supervision, output, losses):
    """Train a dynamics model on one graph sample."""
    from .formatter import LOSS_COLUMNS, display_training, loss_rows, write_csv
    from .training import Trainer

    verbose = ctx.obj["verbose"]
    with _handle_errors(verbose):
        model_cfg = _section(ctx, "model", kind=kind, seed=seed)
        train_cfg = _section(ctx, "train", epochs=epochs, lr=lr, seed=seed, supervision=supervision)
        sample = _load_sample(sample_path)
        start = time.time()
        with _progress() as progress:
            task = progress.add_task(f"Training {model_cfg.kind.value}...", total=train_cfg.epochs)
            trainer = Trainer(
                sample,
                model_cfg.kind,
                train_cfg,
                model_cfg,
                verbose=verbose,
                log_callback=_log_callback(verbose),
                progress_callback=lambda done, total: progress.update(task, completed=done),
            )
            params, history = trainer.train()
        params.to_json(output)
        display_training(history)
        if losses:
            name = sample.metadata.get("source", Path(sample_path).stem)
            write_csv(losses, LOSS_COLUMNS, loss_rows(str(name), model_cfg.kind.value, history))
            console.print(f"  Wrote {len(history)} epochs to {losses}")
        console.print(f"\n✨ Done in {time.time() - start:.1f}s, parameters -> {output}")


@main.command()
@click.argument("sample_paths", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--models", help="Comma-separated roster, e.g. ocgnn,gcn,cn-pde")
@click.option("--reference", type=click.Choice(["irregular", "pde"]), help="CN reference variant")
@click.option("--seeds", help="Comma-separated seeds")
@click.option("--output", "-o", type=click.Path(file_okay=False), required=True)
@click.option("--no-cache", is_flag=True, help="Disable the trained-parameter cache")
@click.option("--clear-cache", is_flag=True, help="Clear the cache before running")
@click.pass_context
def benchmark(ctx, sample_paths, models, reference, seeds, output, no_cache, clear_cache):
    """Score models against the Crank-Nicolson reference."""
    from .benchmark import BenchmarkRunner
    from .cache import ParamsCache
    from .formatter import display_metrics

    verbose = ctx.obj["verbose"]
    with _handle_errors(verbose):
        config: AppConfig = ctx.obj["config"]
        bench = config.section(
            "benchmark",
            models=_split(models),
            reference=reference,
            seeds=[int(s) for s in _split(seeds)] if seeds else None,
        )
        config = config.model_copy(update={"benchmark": bench})

        if clear_cache:
            count = ParamsCache().clear()
            console.print(f"  Cleared {count} cache entries")

        samples = []
        for path in sample_paths:
            sample = _load_sample(path)
            samples.append((Path(path).stem, sample))

        start = time.time()
        with _progress() as progress:
            total = len(samples) * len(bench.models) * len(bench.seeds)
            task = progress.add_task("Benchmarking...", total=total)
            runner = BenchmarkRunner(
                config,
                output_dir=output,
                use_cache=bench.use_cache and not no_cache,
                verbose=verbose,
                log_callback=_log_callback(verbose),
                progress_callback=lambda done, _: progress.update(task, completed=done),
            )
            result = runner.run(samples)
        display_metrics(result.reports)

        if verbose and runner.cache is not None:
            stats = runner.cache.stats()
            console.print(f"\n  Cache: {stats['valid_entries']} entries")
        console.print(f"\n✨ Done in {time.time() - start:.1f}s, results in {output}")


@main.command()
@click.option("--quick", is_flag=True, help="Smaller instances for a fast smoke run")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the random cases")
@click.pass_context
def verify(ctx, quick, seed):
    """Run the invariant suite; exits 2 if any check fails."""
    from .formatter import display_checks
    from .models import CheckStatus
    from .verify import InvariantVerifier

    verbose = ctx.obj["verbose"]
    with _handle_errors(verbose):
        verifier = InvariantVerifier(
            ctx.obj["config"],
            quick=quick,
            seed=seed,
            verbose=verbose,
            log_callback=_log_callback(verbose),
        )
        with _progress() as progress:
            task = progress.add_task("Checking invariants...", total=len(verifier.checks))
            verifier.progress_callback = lambda done, _: progress.update(task, completed=done)
            results = verifier.run()
        display_checks(results)
    if any(r.status != CheckStatus.PASSED for r in results):
        sys.exit(EXIT_NUMERICAL)


def _split(value: Optional[str]) -> Optional[List[str]]:
    if not value:
        return None
    return [part.strip() for part in value.split(",") if part.strip()]


if __name__ == "__main__":
    main()
