from typing import ClassVar, Dict, Mapping, Optional, Sequence, Tuple

from dataclasses import dataclass, replace

import logging
import numpy as np

from src.core import (ARGMIN, AlgorithmState, DistributedAlgorithm, LocalObjective, ReducedDecomposition,
                      ensure_finite)
from src.errors import MappingError, ParameterError

logger = logging.getLogger(__name__)

DUAL_STEPS = ("consistent", "printed")


def local_penalized_argmin(objective: LocalObjective,
                           y: np.ndarray,
                           anchors: Sequence[Tuple[float, np.ndarray]],
                           rho: float,
                           warm: Optional[np.ndarray] = None) -> np.ndarray:
    """
    argmin over the node's constraint set of f(x) + yᵀx + (ρ/2)·Σ_k w_k‖x − a_k‖².

    The objective picks the inner solver: a cached factorization for unconstrained quadratics, the
    active-set QP for constrained ones and Levenberg-Marquardt for range costs.
    """
    return objective.penalized_argmin(y, anchors, rho, warm)


# C-ADMM
@dataclass(frozen=True)
class CadmmState(AlgorithmState):
    PUBLIC: ClassVar[Tuple[str, ...]] = ("x",)
    PRIVATE: ClassVar[Tuple[str, ...]] = ("y",)
    PARAMS: ClassVar[Tuple[str, ...]] = ("rho",)
    x: np.ndarray
    y: np.ndarray
    rho: float


def cadmm_step(state: CadmmState, neighbor_x: Mapping[int, np.ndarray], node_id: int,
               objective: LocalObjective, rho: Optional[float] = None, dual_step: str = "consistent") -> CadmmState:
    """
    Dual then primal update:

        y ← y + s·Σ_{j ∈ N_i} (x_i − x_j)
        x ← argmin f(x) + xᵀy + (ρ/2)·Σ_{j ∈ N_i} ‖x − ½(x_i + x_j)‖²

    with s = ρ/2 ("consistent", the multiplier step of the ρ/2 penalty) or s = ρ ("printed").

    Args:
        state (CadmmState): Current state.
        neighbor_x (Mapping[int, np.ndarray]): Published x of the neighbors; an entry for the node itself is ignored.
        node_id (int): The updating node.
        objective (LocalObjective): The node's cost; must provide a penalized argmin.
        rho (Optional[float]): Penalty; the state's own when omitted.
        dual_step (str): "consistent" or "printed".

    Returns:
        CadmmState: Updated state.
    """
    rho = state.rho if rho is None else rho
    if rho <= 0:
        raise ParameterError(f"Penalty ρ must be positive, got {rho}")
    if dual_step not in DUAL_STEPS:
        raise ParameterError(f"Unknown dual step '{dual_step}', expected one of {DUAL_STEPS}")
    scale = 0.5 * rho if dual_step == "consistent" else rho

    others = {j: v for j, v in neighbor_x.items() if j != node_id}
    y = state.y.copy()
    for x_j in others.values():
        y += scale * (state.x - x_j)
    anchors = [(1.0, 0.5 * (state.x + x_j)) for x_j in others.values()]
    if not anchors:
        anchors = [(1.0, state.x)]
    x = local_penalized_argmin(objective, y, anchors, rho, warm=state.x)
    return replace(state, x=ensure_finite(x), y=y, rho=rho)


# SOVA
@dataclass(frozen=True)
class SovaState(AlgorithmState):
    PUBLIC: ClassVar[Tuple[str, ...]] = ("x",)
    PRIVATE: ClassVar[Tuple[str, ...]] = ("y",)
    PARAMS: ClassVar[Tuple[str, ...]] = ("rho",)
    x: np.ndarray
    y: np.ndarray
    rho: float


def sova_step(state: SovaState, neighbor_mapped: Mapping[int, np.ndarray], maps: Mapping[int, np.ndarray],
              objective: LocalObjective, rho: Optional[float] = None) -> SovaState:
    """
    SOVA update on the reduced variable x_i:

        y ← y + ρ·Σ_j Φ_ijᵀ(Φ_ij x_i − Φ_ji x_j)
        x ← argmin f(x) + xᵀy + ρ·Σ_j ‖Φ_ij x − ½(Φ_ij x_i + Φ_ji x_j)‖²

    Args:
        state (SovaState): Current state.
        neighbor_mapped (Mapping[int, np.ndarray]): Φ_ji x_j for every neighbor j.
        maps (Mapping[int, np.ndarray]): Φ_ij for every neighbor j.
        objective (LocalObjective): The node's reduced cost.
        rho (Optional[float]): Penalty; the state's own when omitted.

    Returns:
        SovaState: Updated state.
    """
    rho = state.rho if rho is None else rho
    if rho <= 0:
        raise ParameterError(f"Penalty ρ must be positive, got {rho}")
    if set(neighbor_mapped) != set(maps):
        raise MappingError(f"Mapped neighbors {sorted(neighbor_mapped)} do not match maps {sorted(maps)}")

    n = state.x.shape[0]
    y = state.y.copy()
    quad = np.zeros((n, n))
    linear_shift = np.zeros(n)
    for j, phi in maps.items():
        mapped = np.asarray(neighbor_mapped[j], dtype=float)
        if phi.shape[1] != n:
            raise MappingError(f"Φ for neighbor {j} has {phi.shape[1]} columns, local variable has {n} entries")
        if mapped.shape != (phi.shape[0],):
            raise MappingError(f"Neighbor {j} sent {mapped.shape[0]} shared entries, Φ has {phi.shape[0]} rows")
        own = phi @ state.x
        y += rho * phi.T @ (own - mapped)
        quad += 2.0 * rho * phi.T @ phi
        linear_shift -= rho * phi.T @ (own + mapped)
    if not maps:
        quad += 2.0 * rho * np.eye(n)
        linear_shift -= 2.0 * rho * state.x
    solver = objective.argmin_solver(quad)
    x = objective.solve_argmin(solver, y + linear_shift, warm=state.x)
    return replace(state, x=ensure_finite(x), y=y, rho=rho)


# Executor adapters
@dataclass
class CADMM(DistributedAlgorithm):
    name: ClassVar[str] = "cadmm"
    requires: ClassVar = frozenset({ARGMIN})
    handles_constraints: ClassVar[bool] = True
    rho: float = 1.0
    dual_step: str = "consistent"

    def __post_init__(self):
        if self.rho <= 0:
            raise ParameterError(f"Penalty ρ must be positive, got {self.rho}")
        if self.dual_step not in DUAL_STEPS:
            raise ParameterError(f"Unknown dual step '{self.dual_step}', expected one of {DUAL_STEPS}")

    def initialize(self, ctx, objective, x0) -> CadmmState:
        return CadmmState(x=x0, y=np.zeros_like(x0), rho=self.rho)

    def update(self, ctx, state, publics, objective):
        return cadmm_step(state, {j: p["x"] for j, p in publics.items()}, ctx.node_id, objective,
                          self.rho, self.dual_step)


@dataclass
class SOVA(DistributedAlgorithm):
    """
    SOVA over a reduced-variable decomposition. Each node runs on decomposition.objectives[i] and
    publishes its reduced x; receivers apply their own copy of Φ_ji. Identity maps when no
    decomposition is given.
    """
    name: ClassVar[str] = "sova"
    requires: ClassVar = frozenset({ARGMIN})
    handles_constraints: ClassVar[bool] = True
    rho: float = 1.0
    decomposition: Optional[ReducedDecomposition] = None

    def __post_init__(self):
        if self.rho <= 0:
            raise ParameterError(f"Penalty ρ must be positive, got {self.rho}")

    def prepare(self, objectives, graph, weights):
        if self.decomposition is None:
            self.decomposition = ReducedDecomposition.identity(objectives, graph)
        elif any(a is not b for a, b in zip(self.decomposition.objectives, objectives)):
            raise MappingError("SOVA must run on the decomposition's own objectives")
        self.decomposition.validate(graph)

    def initial_point(self, node_id, objective, x0):
        if x0 is not None and self.decomposition is not None:
            x0 = np.asarray(x0, dtype=float)
            if x0.shape != (objective.dim,):
                x0 = self.decomposition.restrict(node_id, x0)
        return super().initial_point(node_id, objective, x0)

    def maps_for(self, node_id: int, neighbors: Sequence[int]) -> Dict[int, np.ndarray]:
        return {j: self.decomposition.maps[(node_id, j)] for j in neighbors}

    def initialize(self, ctx, objective, x0) -> SovaState:
        return SovaState(x=x0, y=np.zeros_like(x0), rho=self.rho)

    def update(self, ctx, state, publics, objective):
        maps = self.maps_for(ctx.node_id, ctx.neighbors)
        mapped = {j: self.decomposition.maps[(j, ctx.node_id)] @ publics[j]["x"] for j in ctx.neighbors}
        ctx.charge(sum(2 * phi.size for phi in maps.values()))
        return sova_step(state, mapped, maps, objective, self.rho)

    def squared_error(self, node_id, state, reference):
        diff = state.x - self.decomposition.restrict(node_id, reference)
        return float(diff @ diff)

    def agreement_residual(self, states: Sequence[SovaState]) -> float:
        """Largest ‖Φ_ij x_i − Φ_ji x_j‖∞ over the decomposition's edges."""
        worst = 0.0
        for (i, j), phi_ij in self.decomposition.maps.items():
            if i < j:
                gap = phi_ij @ states[i].x - self.decomposition.maps[(j, i)] @ states[j].x
                worst = max(worst, float(np.max(np.abs(gap), initial=0.0)))
        return worst
