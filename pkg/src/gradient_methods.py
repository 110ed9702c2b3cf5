from typing import ClassVar, Mapping, Optional, Tuple

from dataclasses import dataclass, replace

import logging
import numpy as np

from src.core import (AlgorithmState, ConstraintSet, DistributedAlgorithm, LocalObjective, RoundContext,
                      ensure_finite, lazy_weights, mix)
from src.errors import ParameterError, StateError

logger = logging.getLogger(__name__)

SCHEDULES = ("sqrt", "constant")


def step_size(alpha0: float, k: int, schedule: str = "sqrt") -> float:
    """α⁰/√k for k ≥ 1 and α⁰ at k = 0 under "sqrt"; α⁰ throughout under "constant"."""
    if schedule == "constant":
        return alpha0
    if schedule == "sqrt":
        return alpha0 if k == 0 else alpha0 / np.sqrt(k)
    raise ParameterError(f"Unknown step schedule '{schedule}', expected one of {SCHEDULES}")


# DGD
@dataclass(frozen=True)
class DgdState(AlgorithmState):
    PUBLIC: ClassVar[Tuple[str, ...]] = ("x",)
    PARAMS: ClassVar[Tuple[str, ...]] = ("alpha0", "k", "schedule")
    x: np.ndarray
    alpha0: float
    k: int = 0
    schedule: str = "sqrt"

    @property
    def alpha(self) -> float:
        return step_size(self.alpha0, self.k, self.schedule)


def dgd_step(state: DgdState, neighbor_x: Mapping[int, np.ndarray], weights: Mapping[int, float],
             objective: LocalObjective) -> DgdState:
    """
    x ← Σ_{j ∈ N_i ∪ {i}} w_ij x_j − α^(k) ∇f_i(x_i).

    Args:
        state (DgdState): Current state.
        neighbor_x (Mapping[int, np.ndarray]): Published x of the node and its neighbors.
        weights (Mapping[int, float]): Weight row restricted to the same keys.
        objective (LocalObjective): The node's cost.

    Returns:
        DgdState: Updated state with the iteration counter advanced.
    """
    grad = ensure_finite(objective.gradient(state.x), "gradient")
    x = mix(neighbor_x, weights) - state.alpha * grad
    return replace(state, x=x, k=state.k + 1)


# EXTRA
@dataclass(frozen=True)
class ExtraState(AlgorithmState):
    PUBLIC: ClassVar[Tuple[str, ...]] = ("x", "x_prev")
    PRIVATE: ClassVar[Tuple[str, ...]] = ("grad_prev",)
    PARAMS: ClassVar[Tuple[str, ...]] = ("alpha",)
    x: np.ndarray
    x_prev: np.ndarray
    alpha: float
    grad_prev: Optional[np.ndarray] = None
    k: int = 0


def extra_first_step(state: ExtraState, neighbor_x: Mapping[int, np.ndarray], weights: Mapping[int, float],
                     objective: LocalObjective) -> ExtraState:
    """x¹ = Σ w_ij x_j⁰ − α∇f_i(x⁰), recording x⁰ and its gradient as history."""
    grad = ensure_finite(objective.gradient(state.x), "gradient")
    x = mix(neighbor_x, weights) - state.alpha * grad
    return replace(state, x=x, x_prev=state.x, grad_prev=grad, k=state.k + 1)


def extra_step(state: ExtraState, neighbor_history: Mapping[int, Tuple[np.ndarray, np.ndarray]],
               weights: Mapping[int, float], objective: LocalObjective) -> ExtraState:
    """
    x^{k+1} = x^k + Σw x^k − ½(x^{k−1} + Σw x^{k−1}) − α[∇f(x^k) − ∇f(x^{k−1})],
    i.e. mixing with W at the current iterate and with (I + W)/2 at the previous one.
    """
    if state.grad_prev is None:
        raise StateError("EXTRA needs the previous iterate and gradient; run extra_first_step first")
    mixed = mix({j: h[0] for j, h in neighbor_history.items()}, weights)
    mixed_prev = mix({j: h[1] for j, h in neighbor_history.items()}, weights)
    grad = ensure_finite(objective.gradient(state.x), "gradient")
    x = state.x + mixed - 0.5 * (state.x_prev + mixed_prev) - state.alpha * (grad - state.grad_prev)
    return replace(state, x=x, x_prev=state.x, grad_prev=grad, k=state.k + 1)


# DDA
@dataclass(frozen=True)
class DdaState(AlgorithmState):
    PUBLIC: ClassVar[Tuple[str, ...]] = ("z",)
    PRIVATE: ClassVar[Tuple[str, ...]] = ("x",)
    PARAMS: ClassVar[Tuple[str, ...]] = ("alpha0", "k")
    z: np.ndarray
    x: np.ndarray
    alpha0: float
    k: int = 0
    center: Optional[np.ndarray] = None


def dda_prox(z: np.ndarray, alpha: float, feasible: ConstraintSet,
             center: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int]:
    """
    argmin_{x ∈ X} xᵀz + (1/α)ψ(x) for ψ(x) = ½‖x − c‖², which is the projection of c − αz onto X.

    Returns:
        Tuple[np.ndarray, int]: The minimizer and the projection's operation count.
    """
    c = np.zeros_like(z) if center is None else center
    return feasible.project_with_ops(c - alpha * z)


def dda_step(state: DdaState, neighbor_z: Mapping[int, np.ndarray], weights: Mapping[int, float],
             objective: LocalObjective, feasible: Optional[ConstraintSet] = None) -> Tuple[DdaState, int]:
    """
    z ← Σ_{j ∈ N_i ∪ {i}} w_ij z_j + ∇f_i(x_i);  x ← argmin_{x ∈ X} xᵀz + ψ(x)/α^(k).

    Returns:
        Tuple[DdaState, int]: Updated state and the projection's operation count.
    """
    feasible = objective.constraints if feasible is None else feasible
    grad = ensure_finite(objective.gradient(state.x), "gradient")
    z = mix(neighbor_z, weights) + grad
    x, ops = dda_prox(z, step_size(state.alpha0, state.k), feasible, state.center)
    return replace(state, z=z, x=x, k=state.k + 1), ops


# Canonical fixed-step form
@dataclass(frozen=True)
class CanonicalState(AlgorithmState):
    PUBLIC: ClassVar[Tuple[str, ...]] = ("x", "z")
    PARAMS: ClassVar[Tuple[str, ...]] = ("alpha", "zeta0", "zeta1", "zeta2", "zeta3")
    x: np.ndarray
    z: np.ndarray
    alpha: float
    zeta0: float = 0.5
    zeta1: float = 1.0
    zeta2: float = 0.0
    zeta3: float = 0.0


def canonical_step(state: CanonicalState, neighbor_publics: Mapping[int, Mapping[str, np.ndarray]],
                   weights: Mapping[int, float], objective: LocalObjective) -> CanonicalState:
    """
    x ← x + ζ₀z − ζ₁(x − Σwx) + ζ₂(z − Σwz) − α∇f((1 − ζ₃)x + ζ₃Σwx)
    z ← z − x + Σwx
    with every Σ over N_i ∪ {i}.
    """
    mixed_x = mix({j: p["x"] for j, p in neighbor_publics.items()}, weights)
    mixed_z = mix({j: p["z"] for j, p in neighbor_publics.items()}, weights)
    x, z = state.x, state.z
    point = (1.0 - state.zeta3) * x + state.zeta3 * mixed_x
    grad = ensure_finite(objective.gradient(point), "gradient")
    x_new = (x + state.zeta0 * z - state.zeta1 * (x - mixed_x)
             + state.zeta2 * (z - mixed_z) - state.alpha * grad)
    z_new = z - x + mixed_x
    return replace(state, x=x_new, z=z_new)


# DIGing
@dataclass(frozen=True)
class DigingState(AlgorithmState):
    PUBLIC: ClassVar[Tuple[str, ...]] = ("x", "y")
    PRIVATE: ClassVar[Tuple[str, ...]] = ("grad_prev",)
    PARAMS: ClassVar[Tuple[str, ...]] = ("alpha",)
    x: np.ndarray
    y: np.ndarray
    grad_prev: np.ndarray
    alpha: float


def diging_init(x0: np.ndarray, alpha: float, objective: LocalObjective) -> DigingState:
    grad = ensure_finite(objective.gradient(x0), "gradient")
    return DigingState(x=np.array(x0, dtype=float), y=grad.copy(), grad_prev=grad, alpha=alpha)


def diging_step(state: DigingState, neighbor_publics: Mapping[int, Mapping[str, np.ndarray]],
                weights: Mapping[int, float], objective: LocalObjective) -> DigingState:
    """x ← Σwx − αy;  y ← Σwy + ∇f(x_new) − ∇f(x_old)."""
    x = mix({j: p["x"] for j, p in neighbor_publics.items()}, weights) - state.alpha * state.y
    grad = ensure_finite(objective.gradient(x), "gradient")
    y = mix({j: p["y"] for j, p in neighbor_publics.items()}, weights) + grad - state.grad_prev
    return replace(state, x=x, y=y, grad_prev=grad)


# Executor adapters
@dataclass
class DGD(DistributedAlgorithm):
    name: ClassVar[str] = "dgd"
    alpha0: float = 0.1
    schedule: str = "sqrt"

    def initialize(self, ctx: RoundContext, objective: LocalObjective, x0: np.ndarray) -> DgdState:
        step_size(self.alpha0, 0, self.schedule)
        return DgdState(x=x0, alpha0=self.alpha0, schedule=self.schedule)

    def update(self, ctx, state, publics, objective):
        return dgd_step(state, {j: p["x"] for j, p in publics.items()}, ctx.weights, objective)


@dataclass
class EXTRA(DistributedAlgorithm):
    name: ClassVar[str] = "extra"
    alpha: float = 0.1

    def public_keys(self, round_index: int) -> Tuple[str, ...]:
        return ("x", "x_prev")

    def initialize(self, ctx, objective, x0) -> ExtraState:
        return ExtraState(x=x0, x_prev=x0.copy(), alpha=self.alpha)

    def update(self, ctx, state: ExtraState, publics, objective):
        if state.grad_prev is None:
            return extra_first_step(state, {j: p["x"] for j, p in publics.items()}, ctx.weights, objective)
        history = {j: (p["x"], p["x_prev"]) for j, p in publics.items()}
        return extra_step(state, history, ctx.weights, objective)


@dataclass
class DDA(DistributedAlgorithm):
    """Dual averaging with ψ(x) = ½‖x − c‖². `feasible_set` overrides each node's own constraint set."""
    name: ClassVar[str] = "dda"
    handles_constraints: ClassVar[bool] = True
    alpha0: float = 0.1
    feasible_set: Optional[ConstraintSet] = None
    center: Optional[np.ndarray] = None

    def public_keys(self, round_index: int) -> Tuple[str, ...]:
        return ("z",)

    def _feasible(self, objective: LocalObjective) -> ConstraintSet:
        return objective.constraints if self.feasible_set is None else self.feasible_set

    def initialize(self, ctx, objective, x0) -> DdaState:
        z = np.zeros(objective.dim)
        x, _ = dda_prox(z, self.alpha0, self._feasible(objective), self.center)
        return DdaState(z=z, x=x, alpha0=self.alpha0, center=self.center)

    def update(self, ctx, state: DdaState, publics, objective):
        new_state, ops = dda_step(state, {j: p["z"] for j, p in publics.items()}, ctx.weights, objective,
                                  self._feasible(objective))
        ctx.charge(ops)
        return new_state


@dataclass
class Canonical(DistributedAlgorithm):
    name: ClassVar[str] = "canonical"
    alpha: float = 0.1
    zeta0: float = 0.5
    zeta1: float = 1.0
    zeta2: float = 0.0
    zeta3: float = 0.0

    def public_keys(self, round_index: int) -> Tuple[str, ...]:
        return ("x", "z")

    def initialize(self, ctx, objective, x0) -> CanonicalState:
        for name in ("alpha", "zeta0", "zeta1", "zeta2", "zeta3"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterError(f"Canonical parameter {name} must be finite")
        if self.alpha <= 0:
            raise ParameterError(f"Step size must be positive, got {self.alpha}")
        return CanonicalState(x=x0, z=np.zeros_like(x0), alpha=self.alpha, zeta0=self.zeta0,
                              zeta1=self.zeta1, zeta2=self.zeta2, zeta3=self.zeta3)

    def update(self, ctx, state, publics, objective):
        return canonical_step(state, publics, ctx.weights, objective)


@dataclass
class DIGing(DistributedAlgorithm):
    """
    Gradient tracking. With `lazy` every node mixes through ½(W + I) instead of W; on graphs whose
    weight matrix has eigenvalues near −1 (chains, rings) plain W makes the tracker oscillate.
    """
    name: ClassVar[str] = "diging"
    alpha: float = 0.1
    lazy: bool = True

    def public_keys(self, round_index: int) -> Tuple[str, ...]:
        return ("x", "y")

    def initialize(self, ctx, objective, x0) -> DigingState:
        return diging_init(x0, self.alpha, objective)

    def update(self, ctx, state, publics, objective):
        weights = lazy_weights(ctx.weights, ctx.node_id) if self.lazy else ctx.weights
        return diging_step(state, publics, weights, objective)
