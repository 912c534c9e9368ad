"""End-to-end tests of the meshdiff command line."""

import pytest
from click.testing import CliRunner

from meshdiff import verify as verify_module
from meshdiff.cli import main
from meshdiff.errors import NumericalError
from meshdiff.models import GraphSample, ModelKind, ModelParams, Trajectory
from meshdiff.training import Trainer
from meshdiff.verify import InvariantVerifier, random_sample

SMALL_CONFIG = """
[model]
hidden = 4
layers = 1
omegas = [1.0, 4.0]

[train]
nt = 3
T = 0.5

[cn]
nt = 10
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def sample_path(tmp_path):
    path = tmp_path / "demo.json"
    random_sample(10, seed=3).to_json(path)
    return path


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_CONFIG)
    return path


# --- group ---


def test_show_config(runner):
    result = runner.invoke(main, ["--show-config"])
    assert result.exit_code == 0
    assert "[train]" in result.output
    assert "epochs = 300" in result.output


def test_show_config_reads_file(runner, config_path):
    result = runner.invoke(main, ["--config", str(config_path), "--show-config"])
    assert result.exit_code == 0
    assert "hidden = 4" in result.output


def test_missing_config_file_exits_1(runner, tmp_path):
    result = runner.invoke(main, ["--config", str(tmp_path / "nope.toml"), "--show-config"])
    assert result.exit_code == 1
    assert "config file not found" in result.output


def test_help_without_command(runner):
    result = runner.invoke(main, [])
    assert result.exit_code == 0
    assert "gen-mesh" in result.output


# --- data generation ---


def test_gen_mesh_point_cloud(runner, tmp_path):
    out = tmp_path / "cloud.json"
    result = runner.invoke(
        main, ["gen-mesh", "--kind", "uniform", "--n", "60", "--k", "4", "-o", str(out)]
    )
    assert result.exit_code == 0, result.output
    sample = GraphSample.from_json(out)
    assert sample.n_nodes == 60


def test_gen_mesh_wound_csv_needs_physical_kind(runner, tmp_path):
    result = runner.invoke(
        main,
        ["gen-mesh", "--kind", "uniform", "-o", str(tmp_path / "a.json"), "--wound-csv", "w.csv"],
    )
    assert result.exit_code == 1
    assert "Error" in result.output


def test_ingest_tetrahedron(runner, tmp_path, tetrahedron_obj):
    out = tmp_path / "tet.json"
    result = runner.invoke(main, ["ingest", str(tetrahedron_obj), "--k", "3", "-o", str(out)])
    assert result.exit_code == 0, result.output
    sample = GraphSample.from_json(out)
    assert sample.n_nodes == 4
    assert sample.n_edges == 6
    assert not sample.boundary_mask.any()


def test_ingest_reports_parse_errors(runner, tmp_path):
    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    result = runner.invoke(main, ["ingest", str(bad), "-o", str(tmp_path / "x.json")])
    assert result.exit_code == 1
    assert "line 4" in result.output


# --- solvers ---


def test_solve_cn(runner, tmp_path, sample_path):
    out = tmp_path / "traj.json"
    result = runner.invoke(main, ["solve-cn", str(sample_path), "--nt", "5", "-o", str(out)])
    assert result.exit_code == 0, result.output
    traj = Trajectory.from_json(out)
    assert traj.states.shape == (6, 10)


def test_solve_cn_all_boundary_exits_1(runner, tmp_path):
    graph = random_sample(6, seed=0)
    graph = graph.model_copy(update={"boundary_mask": graph.boundary_mask | True})
    path = tmp_path / "closed.json"
    graph.to_json(path)
    result = runner.invoke(main, ["solve-cn", str(path), "-o", str(tmp_path / "t.json")])
    assert result.exit_code == 1
    assert "no interior nodes" in result.output


def test_solve_cn_invalid_json_exits_1(runner, tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    result = runner.invoke(main, ["solve-cn", str(path), "-o", str(tmp_path / "t.json")])
    assert result.exit_code == 1


def test_fd_demo_stable(runner, tmp_path):
    out = tmp_path / "fd.csv"
    result = runner.invoke(
        main, ["fd-demo", "--nx", "12", "--ny", "12", "--steps", "20", "-o", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert "Stable" in result.output
    assert out.read_text().splitlines()[0] == "step,max_u,heat,boundary_flux,diverged"


def test_fd_demo_divergence_is_not_an_error(runner):
    result = runner.invoke(
        main, ["fd-demo", "--nx", "12", "--ny", "12", "--steps", "5", "--dt", "1.0"]
    )
    assert result.exit_code == 0, result.output
    assert "Diverged" in result.output


# --- learning ---


def test_train(runner, tmp_path, sample_path, config_path):
    out = tmp_path / "params.json"
    losses = tmp_path / "losses.csv"
    args = ["--config", str(config_path), "train", str(sample_path), "--model", "gcn"]
    args += ["--epochs", "2", "-o", str(out), "--losses", str(losses)]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    assert ModelParams.from_json(out).kind == ModelKind.GCN
    assert len(losses.read_text().splitlines()) == 3


def test_train_numerical_failure_exits_2(runner, tmp_path, sample_path, config_path, monkeypatch):
    def explode(self):
        raise NumericalError("non-finite loss at epoch 0")

    monkeypatch.setattr(Trainer, "train", explode)
    args = ["--config", str(config_path), "train", str(sample_path), "-o", str(tmp_path / "p")]
    result = runner.invoke(main, args)
    assert result.exit_code == 2
    assert "Numerical error" in result.output


def test_benchmark(runner, tmp_path, sample_path, config_path):
    out = tmp_path / "results"
    args = ["--config", str(config_path), "benchmark", str(sample_path)]
    args += ["--models", "cn-irregular,ocgnn-untrained", "--no-cache", "-o", str(out)]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    rows = (out / "metrics.csv").read_text().splitlines()
    assert len(rows) == 3
    assert rows[1].startswith("demo,cn-irregular,cn-irregular,0.0,0.0,0.0,")


def test_benchmark_unknown_model_exits_1(runner, tmp_path, sample_path):
    args = ["benchmark", str(sample_path), "--models", "nope", "-o", str(tmp_path / "r")]
    result = runner.invoke(main, args)
    assert result.exit_code == 1
    assert "unknown benchmark models" in result.output


# --- verify ---


def _stub(outcome):
    class Stub(InvariantVerifier):
        @property
        def checks(self):
            return [("always", lambda: (outcome, 0.0, "stub"))]

    return Stub


def test_verify_passing(runner, monkeypatch):
    monkeypatch.setattr(verify_module, "InvariantVerifier", _stub(True))
    result = runner.invoke(main, ["verify", "--quick"])
    assert result.exit_code == 0, result.output
    assert "1/1 checks passed" in result.output


def test_verify_failure_exits_2(runner, monkeypatch):
    monkeypatch.setattr(verify_module, "InvariantVerifier", _stub(False))
    result = runner.invoke(main, ["verify"])
    assert result.exit_code == 2
