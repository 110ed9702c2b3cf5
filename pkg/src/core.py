from typing import Callable, ClassVar, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple
from abc import ABC, abstractmethod

from dataclasses import dataclass, fields

import logging
import time
import numpy as np
from tqdm import tqdm

from src.errors import CapabilityError, DivergenceError, MappingError, ParameterError, StateError
from src.graph import CommGraph, WeightMatrix, metropolis_weights
from src.qp_solver import QpSolver, unique_rows
from src.util_classes import RunTrace, TerminationReason, TraceRecord
from src.vars import DEFAULT_BLOWUP_MSE, DEFAULT_ITERATION_CAP, DEFAULT_TOL_MSE, KKT_TOLERANCE, SECONDS_PER_OP

logger = logging.getLogger(__name__)

GRADIENT = "gradient"
HESSIAN = "hessian"
ARGMIN = "argmin"


# Constraint sets
class ConstraintSet:
    """Box bounds and affine equalities on a decision vector of length `dim`."""

    def __init__(self,
                 dim: int,
                 lower: Optional[np.ndarray] = None,
                 upper: Optional[np.ndarray] = None,
                 eq_matrix: Optional[np.ndarray] = None,
                 eq_vector: Optional[np.ndarray] = None):
        self.dim = dim
        self.lower = np.full(dim, -np.inf) if lower is None else np.asarray(lower, dtype=float).reshape(dim)
        self.upper = np.full(dim, np.inf) if upper is None else np.asarray(upper, dtype=float).reshape(dim)
        if eq_matrix is None:
            eq_matrix, eq_vector = np.zeros((0, dim)), np.zeros(0)
        eq_matrix = np.asarray(eq_matrix, dtype=float).reshape(-1, dim)
        eq_vector = np.asarray(eq_vector, dtype=float).reshape(-1)
        self.eq_matrix, self.eq_vector = unique_rows(eq_matrix, eq_vector)
        if np.any(self.lower > self.upper):
            raise ValueError("Constraint set has a lower bound above its upper bound")
        self._projector: Optional[QpSolver] = None

    @classmethod
    def unconstrained(cls, dim: int) -> "ConstraintSet":
        return cls(dim)

    @classmethod
    def box(cls, lower, upper) -> "ConstraintSet":
        lower = np.asarray(lower, dtype=float)
        return cls(lower.shape[0], lower=lower, upper=upper)

    @property
    def has_bounds(self) -> bool:
        return bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))

    @property
    def has_equalities(self) -> bool:
        return self.eq_matrix.shape[0] > 0

    @property
    def kind(self) -> str:
        if self.has_bounds and self.has_equalities:
            return "composite"
        if self.has_bounds:
            return "box"
        if self.has_equalities:
            return "affine"
        return "none"

    def violation(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        parts = [0.0,
                 float(np.max(np.maximum(self.lower - x, 0.0), initial=0.0)),
                 float(np.max(np.maximum(x - self.upper, 0.0), initial=0.0))]
        if self.has_equalities:
            parts.append(float(np.max(np.abs(self.eq_matrix @ x - self.eq_vector))))
        return max(parts)

    def contains(self, x: np.ndarray, tol: float = KKT_TOLERANCE) -> bool:
        return self.violation(x) <= tol

    def project(self, x: np.ndarray) -> np.ndarray:
        """Euclidean projection; closed form for boxes, a QP otherwise."""
        return self.project_with_ops(x)[0]

    def project_with_ops(self, x: np.ndarray) -> Tuple[np.ndarray, int]:
        x = np.asarray(x, dtype=float)
        if not self.has_equalities:
            return np.clip(x, self.lower, self.upper), self.dim
        if self._projector is None:
            self._projector = QpSolver(np.eye(self.dim), self.eq_matrix, self.eq_vector, self.lower, self.upper)
        result = self._projector.solve(-x)
        return result.x, result.ops

    def qp_solver(self, quad: np.ndarray) -> QpSolver:
        return QpSolver(quad, self.eq_matrix, self.eq_vector, self.lower, self.upper)

    def intersect(self, other: "ConstraintSet") -> "ConstraintSet":
        if other.dim != self.dim:
            raise ValueError(f"Cannot intersect constraint sets of dimension {self.dim} and {other.dim}")
        return ConstraintSet(
            self.dim,
            lower=np.maximum(self.lower, other.lower),
            upper=np.minimum(self.upper, other.upper),
            eq_matrix=np.vstack([self.eq_matrix, other.eq_matrix]),
            eq_vector=np.concatenate([self.eq_vector, other.eq_vector]),
        )

    def to_document(self) -> dict:
        return {
            "dim": self.dim,
            "lower": [None if not np.isfinite(v) else float(v) for v in self.lower],
            "upper": [None if not np.isfinite(v) else float(v) for v in self.upper],
            "eq_matrix": self.eq_matrix.tolist(),
            "eq_vector": self.eq_vector.tolist(),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "ConstraintSet":
        dim = doc["dim"]
        lower = np.array([-np.inf if v is None else v for v in doc["lower"]], dtype=float)
        upper = np.array([np.inf if v is None else v for v in doc["upper"]], dtype=float)
        eq_matrix = np.array(doc["eq_matrix"], dtype=float).reshape(-1, dim)
        return cls(dim, lower=lower, upper=upper, eq_matrix=eq_matrix, eq_vector=np.array(doc["eq_vector"], dtype=float))


# Local objectives
class ArgminSolver(ABC):
    """Reusable solver for  argmin f(x) + linearᵀx + ½xᵀ·quad·x  over a node's constraint set."""

    @abstractmethod
    def solve(self, linear: np.ndarray, warm: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int]:
        """Returns the minimizer and the operation count spent."""


class LocalObjective(ABC):
    """
    A node's private cost f_i. Evaluation calls are tallied in `ops` so the executor can charge
    compute per node update.
    """

    def __init__(self, dim: int, constraints: Optional[ConstraintSet] = None):
        if dim <= 0:
            raise ValueError(f"Objective dimension must be positive, got {dim}")
        self.dim = dim
        self.constraints = constraints if constraints is not None else ConstraintSet.unconstrained(dim)
        self.ops = 0

    # costs charged per call
    @property
    def value_cost(self) -> int:
        return 2 * self.dim

    @property
    def gradient_cost(self) -> int:
        return 2 * self.dim

    @property
    def hessian_cost(self) -> int:
        return self.dim * self.dim

    @property
    def capabilities(self) -> FrozenSet[str]:
        return frozenset({GRADIENT, ARGMIN})

    def value(self, x: np.ndarray) -> float:
        self.ops += self.value_cost
        return self._value(np.asarray(x, dtype=float))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        self.ops += self.gradient_cost
        return self._gradient(np.asarray(x, dtype=float))

    def hessian(self, x: np.ndarray) -> np.ndarray:
        if HESSIAN not in self.capabilities:
            raise CapabilityError(None, HESSIAN)
        self.ops += self.hessian_cost
        return self._hessian(np.asarray(x, dtype=float))

    @abstractmethod
    def _value(self, x: np.ndarray) -> float:
        pass

    @abstractmethod
    def _gradient(self, x: np.ndarray) -> np.ndarray:
        pass

    def _hessian(self, x: np.ndarray) -> np.ndarray:
        raise CapabilityError(None, HESSIAN)

    def argmin_solver(self, quad: np.ndarray) -> ArgminSolver:
        raise CapabilityError(None, ARGMIN)

    def solve_argmin(self, solver: ArgminSolver, linear: np.ndarray, warm: Optional[np.ndarray] = None) -> np.ndarray:
        x, ops = solver.solve(np.asarray(linear, dtype=float), warm)
        self.ops += ops
        return x

    def penalized_argmin(self,
                         linear: np.ndarray,
                         anchors: Sequence[Tuple[float, np.ndarray]],
                         rho: float,
                         warm: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Minimize f(x) + linearᵀx + (ρ/2)·Σ_k w_k‖x − a_k‖² over the constraint set.

        Args:
            linear (np.ndarray): Linear term (typically the dual variable).
            anchors (Sequence[Tuple[float, np.ndarray]]): (weight, anchor) pairs of the proximal penalty.
            rho (float): Penalty weight.
            warm (Optional[np.ndarray]): Starting point for iterative inner solvers.

        Returns:
            np.ndarray: The minimizer.
        """
        if rho <= 0:
            raise ParameterError(f"Penalty weight must be positive, got {rho}")
        total = float(sum(w for w, _ in anchors))
        lin = np.asarray(linear, dtype=float).copy()
        for w, a in anchors:
            lin -= rho * w * np.asarray(a, dtype=float)
        solver = self.argmin_solver(rho * total * np.eye(self.dim))
        return self.solve_argmin(solver, lin, warm)

    def to_document(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} has no document form")


# Algorithm plumbing
@dataclass(frozen=True)
class AlgorithmState:
    """Per-node algorithm state. Subclasses list which fields are public, private and parameters."""
    PUBLIC: ClassVar[Tuple[str, ...]] = ("x",)
    PRIVATE: ClassVar[Tuple[str, ...]] = ()
    PARAMS: ClassVar[Tuple[str, ...]] = ()


@dataclass(frozen=True)
class NodeEnvelope:
    node_id: int
    state: AlgorithmState

    def publish(self, keys: Sequence[str]) -> Dict[str, np.ndarray]:
        hidden = [key for key in keys if key not in self.state.PUBLIC]
        if hidden:
            kinds = ["parameter" if key in self.state.PARAMS else "private" for key in hidden]
            raise StateError(f"Node {self.node_id} cannot publish {list(zip(hidden, kinds))}; "
                             f"public fields are {list(self.state.PUBLIC)}")
        return {key: np.array(getattr(self.state, key), dtype=float, copy=True) for key in keys}


@dataclass
class RoundContext:
    """What a node sees while updating: its neighborhood and the weights of its row."""
    node_id: int
    iteration: int
    round_index: int
    neighbors: Tuple[int, ...]
    weights: Dict[int, float]
    num_nodes: int
    ops: int = 0

    def charge(self, ops: int):
        self.ops += int(ops)


def mix(values: Mapping[int, np.ndarray], weights: Mapping[int, float]) -> np.ndarray:
    """Σ_j w_ij v_j over the keys of `weights` (the node's neighborhood including itself)."""
    total = None
    for j, w in weights.items():
        term = w * np.asarray(values[j], dtype=float)
        total = term if total is None else total + term
    return total


def lazy_weights(weights: Mapping[int, float], node_id: int) -> Dict[int, float]:
    """Row of ½(W + I): half the weight stays on the node itself, so every eigenvalue lies in [0, 1]."""
    lazy = {j: 0.5 * w for j, w in weights.items()}
    lazy[node_id] = lazy.get(node_id, 0.0) + 0.5
    return lazy


def ensure_finite(value: np.ndarray, what: str = "iterate") -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise DivergenceError(what=what)
    return value


class DistributedAlgorithm(ABC):
    """
    A synchronous per-node update rule. Each iteration runs `rounds_per_iteration` communication
    rounds; in round p every node publishes the fields named by `public_keys(p)` and then updates
    from the snapshot of its neighborhood.
    """
    name: ClassVar[str] = ""
    requires: ClassVar[FrozenSet[str]] = frozenset({GRADIENT})
    handles_constraints: ClassVar[bool] = False

    @property
    def rounds_per_iteration(self) -> int:
        return 1

    def public_keys(self, round_index: int) -> Tuple[str, ...]:
        return ("x",)

    def prepare(self, objectives: Sequence[LocalObjective], graph: CommGraph, weights: WeightMatrix):
        """Hook run once before initialization."""

    def initial_point(self, node_id: int, objective: LocalObjective, x0: Optional[np.ndarray]) -> np.ndarray:
        if x0 is None:
            return np.zeros(objective.dim)
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (objective.dim,):
            raise ValueError(f"Initial point for node {node_id} has shape {x0.shape}, expected ({objective.dim},)")
        return x0.copy()

    @abstractmethod
    def initialize(self, ctx: RoundContext, objective: LocalObjective, x0: np.ndarray) -> AlgorithmState:
        pass

    @abstractmethod
    def update(self,
               ctx: RoundContext,
               state: AlgorithmState,
               publics: Dict[int, Dict[str, np.ndarray]],
               objective: LocalObjective) -> AlgorithmState:
        pass

    def estimate(self, state: AlgorithmState) -> np.ndarray:
        return state.x

    def squared_error(self, node_id: int, state: AlgorithmState, reference: np.ndarray) -> float:
        diff = self.estimate(state) - reference
        return float(diff @ diff)

    def agreement_residual(self, states: Sequence[AlgorithmState]) -> float:
        """Largest ‖x_i − x_j‖∞ between any two nodes' estimates."""
        estimates = np.array([self.estimate(state) for state in states], dtype=float)
        return float(np.max(np.ptp(estimates, axis=0), initial=0.0))

    def parameters(self) -> Dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)
                if isinstance(getattr(self, f.name), (int, float)) and not isinstance(getattr(self, f.name), bool)}


# Problem instances
@dataclass
class ReducedDecomposition:
    """
    Split of the global vector into per-node reduced variables x_i = x[selectors[i]].
    maps[(i, j)] is Φ_ij, taking node i's variable into the space it shares with node j.
    """
    objectives: List[LocalObjective]
    selectors: List[np.ndarray]
    maps: Dict[Tuple[int, int], np.ndarray]

    def validate(self, graph: CommGraph):
        if len(self.objectives) != graph.num_nodes or len(self.selectors) != graph.num_nodes:
            raise MappingError(f"Decomposition has {len(self.objectives)} nodes, graph has {graph.num_nodes}")
        for i, (objective, selector) in enumerate(zip(self.objectives, self.selectors)):
            if objective.dim != len(selector):
                raise MappingError(f"Node {i}: objective dimension {objective.dim} != selector length {len(selector)}")
        for i, j in graph.edges:
            if (i, j) not in self.maps or (j, i) not in self.maps:
                raise MappingError(f"Edge ({i}, {j}) is missing a coordinate map")
            phi_ij, phi_ji = self.maps[(i, j)], self.maps[(j, i)]
            if phi_ij.shape[0] != phi_ji.shape[0]:
                raise MappingError(f"Maps on edge ({i}, {j}) have {phi_ij.shape[0]} and {phi_ji.shape[0]} rows")
            if phi_ij.shape[1] != self.objectives[i].dim or phi_ji.shape[1] != self.objectives[j].dim:
                raise MappingError(f"Maps on edge ({i}, {j}) do not match the local dimensions")

    def restrict(self, node_id: int, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.selectors[node_id]]

    @classmethod
    def identity(cls, objectives: Sequence[LocalObjective], graph: CommGraph) -> "ReducedDecomposition":
        n = objectives[0].dim
        maps = {}
        for i, j in graph.edges:
            maps[(i, j)] = np.eye(n)
            maps[(j, i)] = np.eye(n)
        return cls(list(objectives), [np.arange(n) for _ in objectives], maps)


@dataclass
class ProblemInstance:
    name: str
    objectives: List[LocalObjective]
    reference: np.ndarray
    ground_truth: Optional[np.ndarray] = None
    feasible_set: Optional[ConstraintSet] = None
    positions: Optional[np.ndarray] = None
    decomposition: Optional[ReducedDecomposition] = None
    document: Optional[dict] = None

    @property
    def num_nodes(self) -> int:
        return len(self.objectives)

    @property
    def dim(self) -> int:
        return self.objectives[0].dim


# Stopping
@dataclass(frozen=True)
class StopRule:
    tol_mse: float = DEFAULT_TOL_MSE
    cap: int = DEFAULT_ITERATION_CAP
    blowup: float = DEFAULT_BLOWUP_MSE
    normalize: bool = False

    def __post_init__(self):
        if self.tol_mse <= 0:
            raise ValueError(f"tol_mse must be positive, got {self.tol_mse}")
        if self.blowup <= self.tol_mse:
            raise ValueError(f"blowup ({self.blowup}) must exceed tol_mse ({self.tol_mse})")
        if self.cap < 0:
            raise ValueError(f"Iteration cap must be nonnegative, got {self.cap}")


def check_stop(trace: RunTrace, tol_mse: float, cap: int, blowup: float) -> Optional[TerminationReason]:
    """Termination decision for the latest record; None means keep going."""
    record = trace.last
    if not np.isfinite(record.mse) or record.mse >= blowup:
        return TerminationReason.DIVERGED
    if record.mse <= tol_mse:
        return TerminationReason.CONVERGED
    if record.iteration >= cap:
        return TerminationReason.ITERATION_CAP
    return None


@dataclass(frozen=True)
class ComputeClock:
    """`proxy` reports ops × seconds_per_op as compute seconds; `wallclock` reports measured time."""
    kind: str = "proxy"
    seconds_per_op: float = SECONDS_PER_OP

    def __post_init__(self):
        if self.kind not in ("proxy", "wallclock"):
            raise ValueError(f"Unknown compute clock '{self.kind}'")

    def seconds(self, ops: int, wall: float) -> float:
        return ops * self.seconds_per_op if self.kind == "proxy" else wall


# Executor
class RoundExecutor:
    """Runs a DistributedAlgorithm over a graph with synchronous neighbor exchange."""

    def __init__(self,
                 algorithm: DistributedAlgorithm,
                 objectives: Sequence[LocalObjective],
                 graph: CommGraph,
                 weights: Optional[WeightMatrix] = None,
                 clock: ComputeClock = ComputeClock()):
        self._logger = logging.getLogger(__name__)

        if len(objectives) != graph.num_nodes:
            raise ValueError(f"Expected {graph.num_nodes} objectives, got {len(objectives)}")
        graph.require_connected()
        for i, objective in enumerate(objectives):
            for capability in algorithm.requires:
                if capability not in objective.capabilities:
                    raise CapabilityError(i, capability)
        if not algorithm.handles_constraints and any(obj.constraints.kind != "none" for obj in objectives):
            self._logger.warning(f"{algorithm.name} ignores the local constraint sets of this problem")

        self.algorithm = algorithm
        self.objectives = list(objectives)
        self.graph = graph
        self.weights = weights if weights is not None else metropolis_weights(graph)
        self.clock = clock
        self._neighbors = [tuple(graph.neighbors(i)) for i in range(graph.num_nodes)]

    def _context(self, i: int, iteration: int, round_index: int) -> RoundContext:
        hood = self._neighbors[i] + (i,)
        return RoundContext(
            node_id=i,
            iteration=iteration,
            round_index=round_index,
            neighbors=self._neighbors[i],
            weights={j: float(self.weights.W[i, j]) for j in sorted(hood)},
            num_nodes=self.graph.num_nodes,
        )

    def initialize(self, x0=None) -> List[NodeEnvelope]:
        self.algorithm.prepare(self.objectives, self.graph, self.weights)
        envelopes = []
        for i, objective in enumerate(self.objectives):
            start = x0[i] if isinstance(x0, (list, tuple)) else x0
            point = self.algorithm.initial_point(i, objective, start)
            envelopes.append(NodeEnvelope(i, self.algorithm.initialize(self._context(i, 0, -1), objective, point)))
        return envelopes

    def mse(self, envelopes: Sequence[NodeEnvelope], reference: np.ndarray, normalize: bool = False) -> float:
        total = sum(self.algorithm.squared_error(env.node_id, env.state, reference) for env in envelopes)
        value = total / len(envelopes)
        if normalize:
            scale = float(reference @ reference)
            if scale > 0:
                value /= scale
        return value

    def run(self,
            reference: np.ndarray,
            stop: StopRule = StopRule(),
            nodes: Optional[List[NodeEnvelope]] = None,
            x0=None,
            node_order: Optional[Sequence[int]] = None,
            raise_on_divergence: bool = False,
            progress: bool = False,
            callback: Optional[Callable[[int, List[NodeEnvelope]], None]] = None) -> RunTrace:
        """
        Iterate until the stop rule fires.

        Args:
            reference (np.ndarray): Centralized solution the MSE is measured against.
            stop (StopRule): Tolerance, iteration cap and blowup threshold.
            nodes (Optional[List[NodeEnvelope]]): Pre-initialized envelopes; initialized here when omitted.
            x0: Shared initial point or one per node. Zeros when omitted.
            node_order (Optional[Sequence[int]]): Order of node updates within a round.
            raise_on_divergence (bool): Raise DivergenceError instead of recording a diverged run.
            progress (bool): Show a progress bar over iterations.
            callback: Called with (iteration, envelopes) after each iteration.

        Returns:
            RunTrace: Per-iteration MSE and cumulative communication and compute counters.
        """
        reference = np.asarray(reference, dtype=float)
        envelopes = nodes if nodes is not None else self.initialize(x0)
        n_nodes = len(envelopes)
        order = list(node_order) if node_order is not None else list(range(n_nodes))
        if sorted(order) != list(range(n_nodes)):
            raise ValueError(f"node_order must be a permutation of 0..{n_nodes - 1}")

        # initialization work is not charged
        for objective in self.objectives:
            objective.ops = 0

        trace = RunTrace(algorithm=self.algorithm.name)
        trace.append(TraceRecord(0, self.mse(envelopes, reference, stop.normalize), 0, 0, 0.0, 0.0))
        decision = check_stop(trace, stop.tol_mse, stop.cap, stop.blowup)

        floats, ops, wall = 0, 0, 0.0
        iteration = 0
        bar = tqdm(total=stop.cap, disable=not progress, desc=self.algorithm.name, leave=False)
        self._logger.info(f"Running {self.algorithm.name} on {n_nodes} nodes (cap {stop.cap}, tol {stop.tol_mse:g})")

        while decision is None:
            try:
                for round_index in range(self.algorithm.rounds_per_iteration):
                    envelopes, round_floats, round_ops, round_wall = self._round(envelopes, iteration, round_index, order)
                    floats += round_floats
                    ops += round_ops
                    wall += round_wall
                iteration += 1
                mse = self.mse(envelopes, reference, stop.normalize)
            except DivergenceError as e:
                e.iteration = iteration + 1 if e.iteration is None else e.iteration
                if raise_on_divergence:
                    raise DivergenceError(e.iteration, e.node, e.what)
                self._logger.warning(f"{self.algorithm.name} diverged: {e}")
                iteration += 1
                trace.diverged_at = iteration
                mse = float("inf")

            trace.append(TraceRecord(iteration, mse, floats, ops, self.clock.seconds(ops, wall), wall))
            decision = check_stop(trace, stop.tol_mse, stop.cap, stop.blowup)
            if raise_on_divergence and decision == TerminationReason.DIVERGED:
                raise DivergenceError(iteration)
            if callback is not None:
                callback(iteration, envelopes)
            bar.update(1)
        bar.close()

        trace.termination = decision
        trace.estimates = [np.array(self.algorithm.estimate(env.state), copy=True) for env in envelopes]
        if decision != TerminationReason.DIVERGED:
            trace.agreement = self.algorithm.agreement_residual([env.state for env in envelopes])
        self._logger.info(f"{self.algorithm.name} stopped after {iteration} iterations: "
                          f"{decision.value}, MSE {trace.final_mse:.3e}"
                          + ("" if trace.agreement is None else f", agreement {trace.agreement:.3e}"))
        return trace

    def _round(self, envelopes: List[NodeEnvelope], iteration: int, round_index: int, order: Sequence[int]):
        keys = self.algorithm.public_keys(round_index)
        snapshot = [env.publish(keys) for env in envelopes]

        floats = 0
        for i, published in enumerate(snapshot):
            floats += len(self._neighbors[i]) * sum(int(np.size(v)) for v in published.values())

        ops, wall = 0, 0.0
        updated: List[Optional[NodeEnvelope]] = [None] * len(envelopes)
        for i in order:
            ctx = self._context(i, iteration, round_index)
            hood = {j: snapshot[j] for j in ctx.weights}
            objective = self.objectives[i]
            before = objective.ops
            # mixing: one multiply-add per received or own public float
            ctx.charge(2 * sum(int(np.size(v)) for publics in hood.values() for v in publics.values()))

            start = time.perf_counter()
            try:
                state = self.algorithm.update(ctx, envelopes[i].state, hood, objective)
            except DivergenceError as e:
                raise DivergenceError(iteration + 1, i, e.what)
            wall += time.perf_counter() - start

            if not np.all(np.isfinite(self.algorithm.estimate(state))):
                raise DivergenceError(iteration + 1, i)
            ops += ctx.ops + (objective.ops - before)
            updated[i] = NodeEnvelope(i, state)
        return updated, floats, ops, wall


def run_rounds(algorithm: DistributedAlgorithm,
               objectives: Sequence[LocalObjective],
               graph: CommGraph,
               reference: np.ndarray,
               stop: StopRule = StopRule(),
               weights: Optional[WeightMatrix] = None,
               nodes: Optional[List[NodeEnvelope]] = None,
               x0=None,
               node_order: Optional[Sequence[int]] = None,
               clock: ComputeClock = ComputeClock(),
               raise_on_divergence: bool = False,
               progress: bool = False) -> RunTrace:
    """Convenience wrapper: build a RoundExecutor and run it once."""
    executor = RoundExecutor(algorithm, objectives, graph, weights=weights, clock=clock)
    return executor.run(reference, stop=stop, nodes=nodes, x0=x0, node_order=node_order,
                        raise_on_divergence=raise_on_divergence, progress=progress)
