"""Executable invariant suite behind ``meshdiff verify``."""

import time
import warnings
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import autodiff as ad
from .benchmark import BenchmarkRunner, median_by_model
from .config import AppConfig, FDConfig, MeshGenConfig, ModelConfig, TrainConfig
from .fd import cfl_timestep, make_grid, run_fd_diffusion
from .graph import (
    apply_edge_signed_permutation,
    apply_node_permutation,
    build_incidence,
    build_knn_graph,
    combinatorial_laplacian,
    induced_edge_permutation,
    make_graph_sample,
)
from .meshgen import generate_physical_mesh
from .metrics import hamiltonian_drift, skew_flow
from .models import CheckResult, CheckStatus, GraphSample, ModelKind, Variant
from .networks import gcn_forward, init_params, ocgnn_forward
from .solver import cn_rollout, diffusion_operator
from .training import Trainer, loss_ptensor
from .utils import make_rng

CheckOutcome = Tuple[bool, Optional[float], str]


def random_sample(
    n: int,
    seed: int,
    k: int = 3,
    boundary_fraction: float = 0.3,
    diffusivity: Tuple[float, float] = (0.5, 1.5),
) -> GraphSample:
    """Small random kNN graph with at least one boundary and one interior node."""
    rng = make_rng(seed)
    positions = rng.random((n, 3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        edges = build_knn_graph(positions, min(k, n - 1))
    boundary = rng.random(n) < boundary_fraction
    boundary[0], boundary[-1] = True, False
    return make_graph_sample(
        positions=positions,
        edges=edges,
        boundary_mask=boundary,
        diffusivity=rng.uniform(*diffusivity, size=n),
        u0=rng.random(n),
        metadata={"source": "random", "seed": seed},
    )


def flip_edges(graph: GraphSample, flips: np.ndarray) -> GraphSample:
    """Same graph with the orientation of edges where ``flips < 0`` reversed."""
    edges = np.where(flips[:, None] < 0, graph.edges[:, ::-1], graph.edges)
    return graph.model_copy(update={"edges": edges})


class InvariantVerifier:
    """Runs the structural, numerical and learning invariants and reports each one."""

    def __init__(
        self,
        config: Optional[AppConfig] = None,
        quick: bool = False,
        seed: int = 0,
        verbose: bool = False,
        log_callback: Callable[[str], None] = None,
        progress_callback: Callable[[int, int], None] = None,
    ):
        self.config = config or AppConfig()
        self.quick = quick
        self.seed = seed
        self.verbose = verbose
        self.log_callback = log_callback
        self.progress_callback = progress_callback

    def _log(self, message: str):
        if self.verbose and self.log_callback:
            self.log_callback(message)

    @property
    def checks(self) -> List[Tuple[str, Callable[[], CheckOutcome]]]:
        checks = [
            ("incidence_adjointness", self.check_incidence_adjointness),
            ("laplacian_factorization", self.check_laplacian_factorization),
            ("hamiltonian_conservation", self.check_hamiltonian_conservation),
            ("wrong_sign_drift", self.check_wrong_sign_drift),
            ("ocgnn_permutation_equivariance", self.check_ocgnn_equivariance),
            ("ocgnn_orientation_invariance", self.check_orientation_invariance),
            ("gcn_permutation_equivariance", self.check_gcn_equivariance),
            ("ptensor_loss_invariance", self.check_ptensor_invariance),
            ("autodiff_primitives", self.check_primitive_gradients),
            ("full_loss_gradient", self.check_full_loss_gradient),
            ("energy_drift_bound", self.check_energy_bound),
            ("cn_matrix_exponential", self.check_cn_oracle),
            ("cn_max_norm", self.check_cn_max_norm),
            ("fd_instability", self.check_fd_instability),
            ("mesh_generation", self.check_mesh_generation),
        ]
        if not self.quick:
            checks.append(("learning_benchmark", self.check_learning_benchmark))
        return checks

    def run(self) -> List[CheckResult]:
        results = []
        checks = self.checks
        for i, (name, fn) in enumerate(checks, start=1):
            start = time.perf_counter()
            try:
                passed, value, detail = fn()
                status = CheckStatus.PASSED if passed else CheckStatus.FAILED
            except Exception as e:
                status, value, detail = CheckStatus.ERROR, None, f"{type(e).__name__}: {e}"
            elapsed = time.perf_counter() - start
            results.append(
                CheckResult(name=name, status=status, detail=detail, value=value, seconds=elapsed)
            )
            self._log(f"{name}: {status.value} ({elapsed:.2f}s) {detail}")
            if self.progress_callback:
                self.progress_callback(i, len(checks))
        return results

    def _samples(self, count: int, max_nodes: int):
        rng = make_rng(self.seed)
        for i in range(count):
            n = int(rng.integers(4, max_nodes + 1))
            yield random_sample(n, seed=self.seed * 1000 + i)

    def _small_model(self, kind: ModelKind, seed: int):
        return init_params(ModelConfig(kind=kind, hidden=8, layers=2, seed=seed), kind)

    # --- structure ---

    def check_incidence_adjointness(self) -> CheckOutcome:
        rng = make_rng(self.seed)
        worst = 0.0
        for graph in self._samples(50, 20):
            B = build_incidence(graph.edges, graph.n_nodes)
            f = rng.normal(size=graph.n_nodes)
            g = rng.normal(size=graph.n_edges)
            worst = max(worst, abs(B.grad(f) @ g - f @ B.div(g)))
        return worst < 1e-12, worst, "(Bf).g - f.(B^T g) over 50 graphs"

    def check_laplacian_factorization(self) -> CheckOutcome:
        worst = 0.0
        for graph in self._samples(50, 20):
            B = build_incidence(graph.edges, graph.n_nodes).matrix
            diff = (B.T @ B - combinatorial_laplacian(graph.n_nodes, graph.edges)).toarray()
            worst = max(worst, float(np.max(np.abs(diff))) if diff.size else 0.0)
        return worst == 0.0, worst, "B^T B against the combinatorial Laplacian"

    def check_hamiltonian_conservation(self) -> CheckOutcome:
        rng = make_rng(self.seed)
        times = np.linspace(0.0, 100.0, 201)
        worst = 0.0
        for graph in self._samples(5, 10):
            B = build_incidence(graph.edges, graph.n_nodes)
            f0, g0 = rng.normal(size=graph.n_nodes), rng.normal(size=graph.n_edges)
            flow = skew_flow(B, f0, g0, times)
            drift = hamiltonian_drift(flow.states, flow.edge_states)
            worst = max(worst, float(np.max(np.abs(drift))))
        return worst < 1e-10, worst, "max |H(t) - H(0)| for t in [0, 100]"

    def check_wrong_sign_drift(self) -> CheckOutcome:
        rng = make_rng(self.seed)
        times = np.linspace(0.0, 1.0, 11)
        weakest = np.inf
        for graph in self._samples(5, 10):
            B = build_incidence(graph.edges, graph.n_nodes)
            flow = skew_flow(
                B, rng.normal(size=graph.n_nodes), rng.normal(size=graph.n_edges), times, sign=1
            )
            drift = float(np.max(np.abs(hamiltonian_drift(flow.states, flow.edge_states))))
            weakest = min(weakest, drift)
        return weakest > 1e-3, weakest, "smallest energy drift with g' = +Bf"

    # --- equivariance ---

    def _permutation_cases(self, count: int):
        rng = make_rng(self.seed + 1)
        for i in range(count):
            graph = random_sample(int(rng.integers(4, 9)), seed=self.seed * 1000 + 500 + i)
            perm = rng.permutation(graph.n_nodes)
            yield i, graph, perm, rng

    def check_ocgnn_equivariance(self) -> CheckOutcome:
        worst = 0.0
        cases = 10 if self.quick else 100
        for i, graph, perm, rng in self._permutation_cases(cases):
            params = self._small_model(ModelKind.OCGNN, seed=i)
            f = rng.normal(size=graph.n_nodes)
            t = float(rng.random())
            f_dot, g_dot = ocgnn_forward(graph, f, t, params)
            permuted = apply_node_permutation(graph, perm)
            _, edge_perm, signs = induced_edge_permutation(graph.edges, perm)
            pf_dot, pg_dot = ocgnn_forward(permuted, apply_node_permutation(f, perm), t, params)
            expected_g = np.empty(graph.n_edges)
            expected_g[edge_perm] = signs * g_dot.data
            worst = max(
                worst,
                float(np.max(np.abs(pf_dot.data - apply_node_permutation(f_dot.data, perm)))),
                float(np.max(np.abs(pg_dot.data - expected_g))),
            )
        return worst < 1e-10, worst, f"{cases} random (graph, permutation) pairs"

    def check_orientation_invariance(self) -> CheckOutcome:
        worst = 0.0
        for i, graph, _, rng in self._permutation_cases(10 if self.quick else 50):
            params = self._small_model(ModelKind.OCGNN, seed=i)
            flips = rng.choice([-1.0, 1.0], size=graph.n_edges)
            f = rng.normal(size=graph.n_nodes)
            f_dot, g_dot = ocgnn_forward(graph, f, 0.3, params)
            ff_dot, fg_dot = ocgnn_forward(flip_edges(graph, flips), f, 0.3, params)
            worst = max(
                worst,
                float(np.max(np.abs(ff_dot.data - f_dot.data))),
                float(np.max(np.abs(fg_dot.data - flips * g_dot.data))),
            )
        return worst < 1e-10, worst, "node output unchanged, edge output sign-flipped"

    def check_gcn_equivariance(self) -> CheckOutcome:
        worst = 0.0
        cases = 10 if self.quick else 100
        for i, graph, perm, rng in self._permutation_cases(cases):
            params = self._small_model(ModelKind.GCN, seed=i)
            f = rng.normal(size=graph.n_nodes)
            out = gcn_forward(graph, f, 0.5, params).data
            permuted = gcn_forward(
                apply_node_permutation(graph, perm), apply_node_permutation(f, perm), 0.5, params
            ).data
            worst = max(worst, float(np.max(np.abs(permuted - apply_node_permutation(out, perm)))))
        return worst < 1e-10, worst, f"{cases} random (graph, permutation) pairs"

    def check_ptensor_invariance(self) -> CheckOutcome:
        worst = 0.0
        for _, graph, perm, rng in self._permutation_cases(10 if self.quick else 100):
            B = build_incidence(graph.edges, graph.n_nodes)
            f, f_dot = rng.normal(size=(2, graph.n_nodes))
            g, g_dot = rng.normal(size=(2, graph.n_edges))
            _, edge_perm, _ = induced_edge_permutation(graph.edges, perm)
            flips = rng.choice([-1.0, 1.0], size=graph.n_edges)
            pg, pB = apply_edge_signed_permutation(g, B, edge_perm, flips, node_perm=perm)
            pg_dot, _ = apply_edge_signed_permutation(g_dot, B, edge_perm, flips, node_perm=perm)
            base = loss_ptensor(f_dot, g_dot, f, g, B).item()
            moved = loss_ptensor(
                apply_node_permutation(f_dot, perm),
                pg_dot,
                apply_node_permutation(f, perm),
                pg,
                pB,
            ).item()
            worst = max(worst, abs(moved - base))
        return worst < 1e-10, worst, "loss under (P_V, Q_E) relabelling"

    # --- gradients and training ---

    def check_primitive_gradients(self) -> CheckOutcome:
        rng = make_rng(self.seed)
        A = rng.normal(size=(4, 3))
        W = rng.normal(size=(3, 2))
        idx = np.array([0, 2, 2, 1, 3])
        S = sp.random(5, 4, density=0.5, random_state=self.seed, format="csr")
        cases = {
            "add": lambda x: ad.sum(ad.add(x, A)),
            "sub": lambda x: ad.sum(ad.sub(A, x) * A),
            "mul": lambda x: ad.sum(ad.mul(x, x)),
            "scalar_mul": lambda x: ad.sum(ad.scalar_mul(x, 2.5) * A),
            "matmul": lambda x: ad.sum(ad.tanh(ad.matmul(x, W))),
            "sparse_matmul": lambda x: ad.squared_norm(ad.sparse_matmul(S, x)),
            "tanh": lambda x: ad.sum(ad.tanh(x) * A),
            "gather": lambda x: ad.squared_norm(ad.gather(x, idx)),
            "scatter_add": lambda x: ad.squared_norm(ad.scatter_add(x, [1, 0, 1, 2], 3)),
            "mean": lambda x: ad.mean(x * x),
            "concat": lambda x: ad.squared_norm(ad.concat([x, ad.tanh(x)], axis=1)),
            "reshape": lambda x: ad.sum(ad.reshape(x, (12,)) * A.reshape(-1)),
        }
        worst, failed = 0.0, []
        for name, fn in cases.items():
            res = ad.grad_check(fn, rng.normal(size=(4, 3)), tol=1e-4)
            worst = max(worst, res.max_error)
            if not res.passed:
                failed.append(name)
        detail = f"failed: {', '.join(failed)}" if failed else f"{len(cases)} primitives"
        return not failed, worst, detail

    def _training_graph(self) -> GraphSample:
        return random_sample(10, seed=self.seed + 7, k=3)

    def check_full_loss_gradient(self) -> CheckOutcome:
        graph = self._training_graph()
        trainer = Trainer(
            graph,
            ModelKind.OCGNN,
            TrainConfig(epochs=0, nt=4),
            ModelConfig(hidden=6, layers=2, seed=self.seed),
        )
        fn = trainer.loss_function()
        theta = trainer.params.flatten()
        coords = make_rng(self.seed).choice(theta.size, size=min(40, theta.size), replace=False)
        res = ad.grad_check(fn, theta, tol=1e-3, indices=coords)
        return res.passed, res.max_error, f"{res.n_checked} parameters of the four-term loss"

    def check_energy_bound(self) -> CheckOutcome:
        graph = self._training_graph()
        trainer = Trainer(
            graph,
            ModelKind.OCGNN,
            TrainConfig(epochs=5 if self.quick else 20, nt=5),
            ModelConfig(hidden=8, layers=2, seed=self.seed),
        )
        _, history = trainer.train()
        slack, skew = np.inf, 0.0
        for h in history:
            inner = abs(h.energy_rate - h.energy_skew)
            slack = min(slack, h.energy_bound * (1.0 + 1e-12) - inner)
            skew = max(skew, abs(h.energy_skew))
        ok = slack >= 0.0 and skew < 1e-10
        return ok, skew, f"Cauchy-Schwarz slack {slack:.3e} over {len(history)} epochs"

    # --- solvers ---

    def _oracle_graphs(self) -> List[GraphSample]:
        n = 8
        x = np.column_stack([np.linspace(0.0, 1.0, n), np.zeros(n), np.zeros(n)])
        boundary = np.zeros(n, bool)
        boundary[0] = True
        u0 = np.sin(np.linspace(0.0, np.pi, n)) + 0.1
        path = make_graph_sample(
            x, [[i, i + 1] for i in range(n - 1)], boundary, np.ones(n), u0
        )
        star_x = np.vstack([[0.0, 0.0, 0.0], np.eye(3), -np.eye(3)])
        star_b = np.zeros(7, bool)
        star_b[1] = True
        star = make_graph_sample(
            star_x, [[0, i] for i in range(1, 7)], star_b, np.full(7, 0.8), np.linspace(1.0, 0.2, 7)
        )
        return [path, star] + list(self._samples(3, 10))

    def check_cn_oracle(self) -> CheckOutcome:
        worst = 0.0
        for graph in self._oracle_graphs():
            traj = cn_rollout(graph, T=1.0, n_t=1000)
            K = diffusion_operator(graph).matrix.toarray()
            free = graph.interior_mask
            exact = np.zeros(graph.n_nodes)
            exact[free] = scipy.linalg.expm(K[np.ix_(free, free)]) @ graph.u0[free]
            worst = max(worst, float(np.max(np.abs(traj.final - exact))))
        return worst < 1e-3, worst, "dt = 1e-3, T = 1 against expm"

    def check_cn_max_norm(self) -> CheckOutcome:
        worst = -np.inf
        for graph in self._oracle_graphs():
            traj = cn_rollout(graph, T=1.0, n_t=100)
            peaks = np.max(np.abs(traj.states), axis=1)
            worst = max(worst, float(np.max(np.diff(peaks))))
        return worst <= 1e-12, worst, "largest one-step increase of max|u|"

    def check_fd_instability(self) -> CheckOutcome:
        cfg: FDConfig = self.config.fd
        size = 40 if self.quick else cfg.nx
        uniform = make_grid(size, size)
        dt = cfl_timestep(uniform.dx_mean, uniform.dy_mean, cfg.D)
        stable = run_fd_diffusion(uniform, cfg.D, dt, cfg.n_steps)
        diverged = 0
        for seed in range(5):
            grid = make_grid(size, size, perturbation_fraction=0.6, seed=seed)
            diverged += run_fd_diffusion(grid, cfg.D, dt, cfg.n_steps).diverged
        ok = not stable.diverged and diverged >= 4
        detail = f"uniform stable={not stable.diverged}, perturbed diverged {diverged}/5"
        return ok, float(diverged), detail

    def check_mesh_generation(self) -> CheckOutcome:
        cfg: MeshGenConfig = self.config.mesh
        if self.quick:
            cfg = cfg.model_copy(update={"n": 200})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            first, wound = generate_physical_mesh(config=cfg)
            second, _ = generate_physical_mesh(config=cfg)
        h_ok = bool(np.all((first.u0 >= 0.0) & (first.u0 <= 1.0)))
        d_ok = wound.damage_in_range()
        shrinking = wound.is_non_increasing()
        split = bool(first.boundary_mask.any() and first.interior_mask.any())
        same = first.to_json() == second.to_json()
        ok = h_ok and d_ok and shrinking and split and same
        detail = (
            f"h in [0,1]={h_ok}, D in [0,1]={d_ok}, wound non-increasing={shrinking}, "
            f"boundary and interior={split}, identical={same}"
        )
        return ok, wound.sum_damage[-1], detail

    def check_learning_benchmark(self) -> CheckOutcome:
        cfg = self.config
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            graph, _ = generate_physical_mesh(config=cfg.mesh.model_copy(update={"n": 300}))
        app = cfg.model_copy(
            update={
                "train": cfg.train.model_copy(update={"epochs": 500}),
                "benchmark": cfg.benchmark.model_copy(
                    update={"seeds": list(range(5)), "reference": Variant.IRREGULAR}
                ),
            }
        )
        runner = BenchmarkRunner(app, use_cache=False)
        result = runner.run([("physical", graph)], models=["ocgnn", "gcn", "ocgnn-untrained"])
        residual = median_by_model(result.reports, "pde_residual_time")
        l2 = median_by_model(result.reports, "l2_norm")
        ordered = residual["ocgnn"] < residual["gcn"] < residual["ocgnn-untrained"]
        ok = ordered and l2["ocgnn"] < 0.1
        detail = (
            f"median R_time ocgnn={residual['ocgnn']:.3e} gcn={residual['gcn']:.3e} "
            f"untrained={residual['ocgnn-untrained']:.3e}, ocgnn L2={l2['ocgnn']:.3e}"
        )
        return ok, l2["ocgnn"], detail
