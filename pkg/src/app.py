from src.admm_methods import CADMM, SOVA
from src.bench import SweepCell, RwcReport, stepsize_sensitivity, sweep_rwc, tune_parameter
from src.core import ComputeClock, DistributedAlgorithm, ProblemInstance, ReducedDecomposition, RoundExecutor, StopRule
from src.errors import ConfigError, DistOptError
from src.gradient_methods import DDA, DGD, DIGing, EXTRA, Canonical
from src.graph import CommGraph, chain_graph, complete_graph, metropolis_weights, random_range_graph, range_limited_graph
from src.newton_methods import NEXT, NetworkNewton
from src.problems import SIZE_PARAMETERS, Instance, build_instance, read_instance, to_problem, write_instance
from src.run_config import AlgorithmConfig, RunConfig
from src.tracking_problem import TrackingInstance
from src.util_classes import RunSummary, RunTrace, TunedParameter
from src.vars import INSTANCE_FILE, REPORT_FILE, SENSITIVITY_FILE, SUMMARY_FILE, TRACE_FILE, TUNED_FILE

from typing import Any, Dict, Optional, Tuple
import logging

from dataclasses import dataclass
import json
import os

import numpy as np
import pandas as pd

ALGORITHMS = {
    "dgd": DGD,
    "extra": EXTRA,
    "dda": DDA,
    "canonical": Canonical,
    "diging": DIGing,
    "nnk": NetworkNewton,
    "next": NEXT,
    "cadmm": CADMM,
    "sova": SOVA,
}

# algorithms that take the shared feasible set of a problem when it has one
SHARED_FEASIBLE_SET = ("dda", "next")


@dataclass
class Setup:
    """A generated problem together with the graph it runs on."""
    instance: Instance
    problem: ProblemInstance
    graph: CommGraph


class App:
    """Builds problems, graphs and algorithms from a RunConfig and writes run artifacts."""

    def __init__(self, config: RunConfig, progress: bool = True):
        self.config = config
        self.progress = progress
        self.clock = ComputeClock(config.accounting.compute_clock, config.accounting.seconds_per_op)

        # Initialize logging
        self._logger = logging.getLogger(__name__)

    # Setup
    def load_problem(self, overrides: Optional[Dict[str, Any]] = None) -> Tuple[Instance, ProblemInstance]:
        """
        Generate (or read) the configured instance and solve it centrally.

        Args:
            overrides (Optional[Dict[str, Any]]): Generator parameters replacing the configured ones.

        Returns:
            Tuple[Instance, ProblemInstance]: The instance and its run-ready problem.
        """
        cfg = self.config.problem
        if cfg.kind == "file":
            if overrides:
                raise ConfigError("A problem read from file cannot be resized", {"problem.kind": "file"})
            instance = read_instance(cfg.path)
        else:
            params = dict(cfg.params)
            params.update(overrides or {})
            instance = build_instance(cfg.kind, params, self.config.seed)
        problem = to_problem(instance, cfg.oracle_starts, self.config.seed)
        self._logger.info(f"Problem {problem.name}: {problem.num_nodes} nodes, dimension {problem.dim}")
        return instance, problem

    def build_graph(self, problem: ProblemInstance) -> CommGraph:
        cfg = self.config.graph
        N = problem.num_nodes
        if cfg.kind == "chain":
            graph = chain_graph(N)
        elif cfg.kind == "complete":
            graph = complete_graph(N)
        elif cfg.kind == "range_limited":
            if problem.positions is None:
                raise ConfigError(f"Problem {problem.name} has no node positions for a range-limited graph",
                                  {"graph.kind": cfg.kind})
            graph = range_limited_graph(problem.positions, cfg.radius)
        elif cfg.kind == "random_range":
            graph = random_range_graph(N, cfg.radius, self.config.seed)
        else:
            graph = CommGraph.read_edge_list(cfg.path)
        if graph.num_nodes != N:
            raise ConfigError(f"Graph has {graph.num_nodes} nodes, problem has {N}", {"graph": cfg.kind})
        self._logger.info(f"Graph {cfg.kind}: {graph.num_nodes} nodes, {graph.num_edges} edges")
        return graph

    def setup(self, overrides: Optional[Dict[str, Any]] = None) -> Setup:
        instance, problem = self.load_problem(overrides)
        return Setup(instance, problem, self.build_graph(problem))

    # Algorithms
    def make_algorithm(self, cfg: AlgorithmConfig, setup: Setup,
                       overrides: Optional[Dict[str, float]] = None) -> DistributedAlgorithm:
        """Instantiate the configured algorithm, wiring in problem-level sets and decompositions."""
        params = dict(cfg.params)
        if cfg.tuned_path:
            tuned = read_tuned(cfg.tuned_path)
            params[tuned.parameter] = tuned.value
        params.update(overrides or {})

        if cfg.name in SHARED_FEASIBLE_SET and setup.problem.feasible_set is not None:
            params.setdefault("feasible_set", setup.problem.feasible_set)
        if cfg.name == "dda" and params.get("center") is not None:
            params["center"] = np.asarray(params["center"], dtype=float)
        if cfg.name == "sova":
            params["decomposition"] = self._decomposition(params.get("decomposition", "identity"), setup)

        try:
            return ALGORITHMS[cfg.name](**params)
        except TypeError as e:
            raise ConfigError(f"Bad parameters for {cfg.name}: {e}", {"algorithm.params": str(e)})

    def _decomposition(self, kind: Any, setup: Setup) -> ReducedDecomposition:
        if kind == "identity":
            return ReducedDecomposition.identity(setup.problem.objectives, setup.graph)
        if kind == "windows":
            if not isinstance(setup.instance, TrackingInstance):
                raise ConfigError("Time-window decomposition needs a tracking problem", {"algorithm.params.decomposition": kind})
            return setup.instance.window_decomposition(setup.graph)
        raise ConfigError(f"Unknown decomposition '{kind}'", {"algorithm.params.decomposition": str(kind)})

    def execute(self, algorithm: DistributedAlgorithm, setup: Setup, cap: Optional[int] = None,
                progress: bool = False) -> RunTrace:
        stop_cfg = self.config.stop
        stop = StopRule(stop_cfg.tol_mse, stop_cfg.cap if cap is None else cap, stop_cfg.blowup, stop_cfg.normalize)
        objectives = setup.problem.objectives
        if isinstance(algorithm, SOVA):
            objectives = algorithm.decomposition.objectives
        executor = RoundExecutor(algorithm, objectives, setup.graph, metropolis_weights(setup.graph), self.clock)
        return executor.run(setup.problem.reference, stop=stop, progress=progress)

    def tune(self, cfg: AlgorithmConfig, setup: Setup) -> TunedParameter:
        if cfg.tune is None:
            raise ConfigError(f"Algorithm {cfg.name} has no tune block", {"algorithm.tune": "missing"})
        cap = self.config.stop.cap if cfg.tune.cap is None else cfg.tune.cap

        def evaluate(value: float) -> RunTrace:
            return self.execute(self.make_algorithm(cfg, setup, {cfg.tune.parameter: value}), setup, cap)

        tuned = tune_parameter(evaluate, cfg.display_name, cfg.tune.parameter, cfg.tune.log10_bounds, cap,
                               self.config.stop.tol_mse, cfg.tune.iterations, self.progress)
        return tuned

    # Commands
    def run(self) -> Tuple[RunSummary, RunTrace]:
        """Tune if asked, run once and write trace, summary and instance files."""
        cfg = self._require_algorithm()
        setup = self.setup()
        tuned: Dict[str, float] = {}
        overrides = {}
        if cfg.tune is not None:
            result = self.tune(cfg, setup)
            self.write_json(TUNED_FILE, result.model_dump())
            tuned[result.parameter] = result.value
            overrides[result.parameter] = result.value

        algorithm = self.make_algorithm(cfg, setup, overrides)
        trace = self.execute(algorithm, setup, progress=self.progress)
        last = trace.last
        summary = RunSummary(
            algorithm=cfg.display_name,
            problem=setup.problem.name,
            termination=trace.termination,
            iterations=last.iteration,
            final_mse=last.mse,
            cum_floats=last.cum_floats,
            cum_ops=last.cum_ops,
            cum_seconds=last.cum_seconds,
            cum_wall_seconds=last.cum_wall_seconds,
            parameters=algorithm.parameters(),
            tuned=tuned,
            agreement_residual=trace.agreement,
        )

        self._prepare_out_dir()
        trace.to_frame().to_csv(self.out_path(TRACE_FILE), index=False, float_format="%.17g")
        self.write_json(SUMMARY_FILE, json.loads(summary.model_dump_json()))
        write_instance(setup.instance, self.out_path(INSTANCE_FILE))
        self._logger.info(f"Wrote {TRACE_FILE} and {SUMMARY_FILE} to {self.config.out}")
        return summary, trace

    def tune_only(self) -> TunedParameter:
        cfg = self._require_algorithm()
        setup = self.setup()
        result = self.tune(cfg, setup)
        self.write_json(TUNED_FILE, result.model_dump())
        return result

    def sweep(self) -> pd.DataFrame:
        sweep = self.config.sweep
        if sweep is None:
            raise ConfigError("The sweep command needs a sweep block", {"sweep": "missing"})
        if sweep.kind == "stepsize":
            frame = self._stepsize_sweep()
            self._prepare_out_dir()
            frame.to_csv(self.out_path(SENSITIVITY_FILE), index=False, float_format="%.17g")
            return frame
        report = self._rwc_sweep()
        self._prepare_out_dir()
        report.to_csv(self.out_path(REPORT_FILE))
        return report.frame

    def _stepsize_sweep(self) -> pd.DataFrame:
        sweep = self.config.sweep
        setup = self.setup()
        frames = []
        for cfg in sweep.algorithms:
            def evaluate(value: float, cfg=cfg) -> RunTrace:
                return self.execute(self.make_algorithm(cfg, setup, {sweep.parameter: value}), setup)
            frames.append(stepsize_sensitivity(evaluate, cfg.display_name, sweep.parameter, sweep.grid,
                                               sweep.n_jobs, self.progress))
        return pd.concat(frames, ignore_index=True)

    def _rwc_sweep(self) -> RwcReport:
        sweep = self.config.sweep
        kind = self.config.problem.kind
        size_parameter = sweep.size_parameter or SIZE_PARAMETERS.get(kind)
        if size_parameter is None:
            raise ConfigError(f"No size parameter for problem kind '{kind}'", {"sweep.size_parameter": "missing"})
        by_label = {cfg.display_name: cfg for cfg in sweep.algorithms}

        def run_cell(label: str, size: int) -> SweepCell:
            cfg = by_label[label]
            setup = self.setup({size_parameter: size})
            N, dim = setup.problem.num_nodes, setup.problem.dim
            overrides = {}
            try:
                if cfg.tune is not None:
                    tuned = self.tune(cfg, setup)
                    overrides[tuned.parameter] = tuned.value
                trace = self.execute(self.make_algorithm(cfg, setup, overrides), setup)
            except DistOptError as e:
                self._logger.error(f"Sweep cell {label} at {size_parameter}={size} (N={N}, n={dim}) failed: {e}")
                return SweepCell(label, N, dim, None, str(e))
            return SweepCell(label, N, dim, trace)

        return sweep_rwc(run_cell, list(by_label), sweep.sizes, sweep.lambdas,
                         self.config.accounting.seconds_per_float, sweep.n_jobs, self.progress)

    # Files
    def _require_algorithm(self) -> AlgorithmConfig:
        if self.config.algorithm is None:
            raise ConfigError("This command needs an algorithm block", {"algorithm": "missing"})
        return self.config.algorithm

    def _prepare_out_dir(self):
        os.makedirs(self.config.out, exist_ok=True)

    def out_path(self, name: str) -> str:
        return os.path.join(self.config.out, name)

    def write_json(self, name: str, payload: Dict[str, Any]):
        self._prepare_out_dir()
        with open(self.out_path(name), "w") as file:
            json.dump(payload, file, indent=2)


def read_tuned(path: str) -> TunedParameter:
    try:
        with open(path, "r") as file:
            return TunedParameter.model_validate(json.load(file))
    except (OSError, ValueError) as e:
        raise ConfigError(f"Cannot read tuned parameter file {path}: {e}", {"algorithm.tuned_path": path})
