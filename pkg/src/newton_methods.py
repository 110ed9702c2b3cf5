from typing import Any, ClassVar, Dict, Mapping, Optional, Tuple

from dataclasses import dataclass, field, replace

import logging
import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.core import (GRADIENT, HESSIAN, AlgorithmState, ConstraintSet, DistributedAlgorithm,
                      LocalObjective, RoundContext, ensure_finite, lazy_weights, mix)
from src.errors import FactorizationError, ParameterError, StateError
from src.vars import NEXT_ALPHA0, NEXT_LINEAR_TAU, NEXT_STEP_DECAY, NEXT_SURROGATE_TAU

logger = logging.getLogger(__name__)

SURROGATES = ("quadratic", "linear")


def _cholesky(matrix: np.ndarray, what: str) -> Tuple[Any, int]:
    try:
        return cho_factor(matrix), matrix.shape[0] ** 3 // 3
    except LinAlgError as e:
        raise FactorizationError(f"{what} is not positive definite: {e}")


# Network Newton-K
@dataclass(frozen=True)
class NnkState(AlgorithmState):
    PUBLIC: ClassVar[Tuple[str, ...]] = ("x", "d")
    PRIVATE: ClassVar[Tuple[str, ...]] = ("D", "g")
    PARAMS: ClassVar[Tuple[str, ...]] = ("alpha", "epsilon", "K")
    x: np.ndarray
    alpha: float
    epsilon: float
    K: int
    D: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    factor: Any = field(default=None, repr=False, compare=False)


def nnk_outer_step(state: NnkState, neighbor_x: Mapping[int, np.ndarray], penalty_row: Mapping[int, float],
                   node_id: int, objective: LocalObjective) -> Tuple[NnkState, int]:
    """
    Refresh the local Newton block and penalized gradient, then start the inner iteration:

        D_i = α∇²f_i(x_i) + 2w̄_ii I
        g_i = α∇f_i(x_i) + Σ_{j ∈ N_i ∪ {i}} w̄_ij x_j
        d⁰ = −D_i⁻¹ g_i

    Args:
        state (NnkState): Current state.
        neighbor_x (Mapping[int, np.ndarray]): Published x of the node and its neighbors.
        penalty_row (Mapping[int, float]): Row i of W̄ = I − W over the same keys.
        node_id (int): The updating node.
        objective (LocalObjective): The node's cost; must provide Hessians.

    Returns:
        Tuple[NnkState, int]: State entering the inner phase and the factorization and solve op count.
    """
    n = state.x.shape[0]
    hessian = objective.hessian(state.x)
    D = state.alpha * hessian + 2.0 * penalty_row[node_id] * np.eye(n)
    factor, ops = _cholesky(D, "Network Newton block D_i (step α may be too small for w̄_ii)")
    grad = ensure_finite(objective.gradient(state.x), "gradient")
    g = state.alpha * grad + mix(neighbor_x, penalty_row)
    d = ensure_finite(-cho_solve(factor, g), "newton direction")
    return replace(state, D=D, g=g, d=d, factor=factor), ops + 2 * n * n


def nnk_inner_step(state: NnkState, neighbor_d: Mapping[int, np.ndarray], penalty_row: Mapping[int, float],
                   node_id: int, p: int) -> Tuple[NnkState, int]:
    """d^{p+1} = D_i⁻¹ [w̄_ii d_i^p − g_i − Σ_{j ∈ N_i} w̄_ij d_j^p]."""
    if state.d is None or state.factor is None:
        raise StateError("Network Newton inner step before the outer step of this iteration")
    if not 0 <= p < state.K:
        raise ParameterError(f"Inner index {p} outside 0..{state.K - 1}")
    rhs = penalty_row[node_id] * state.d - state.g
    for j, d_j in neighbor_d.items():
        if j != node_id:
            rhs = rhs - penalty_row[j] * d_j
    d = ensure_finite(cho_solve(state.factor, rhs), "newton direction")
    n = d.shape[0]
    return replace(state, d=d), 2 * n * n + 2 * n * len(neighbor_d)


def nnk_apply(state: NnkState) -> NnkState:
    """x ← x + εd."""
    if state.d is None:
        raise StateError("No Newton direction to apply")
    return replace(state, x=state.x + state.epsilon * state.d)


@dataclass
class NetworkNewton(DistributedAlgorithm):
    """
    NN-K on the penalized problem α·Σf_i(x_i) + ½xᵀ(W̄ ⊗ I)x. One iteration is K + 1 exchanges:
    x in round 0, then the current direction d in each inner round.
    """
    name: ClassVar[str] = "nnk"
    requires: ClassVar = frozenset({GRADIENT, HESSIAN})
    alpha: float = 1.0
    epsilon: float = 1.0
    K: int = 1

    def __post_init__(self):
        if self.K < 0:
            raise ParameterError(f"K must be non-negative, got {self.K}")
        if self.alpha <= 0 or self.epsilon <= 0:
            raise ParameterError(f"α and ε must be positive, got α={self.alpha}, ε={self.epsilon}")

    @property
    def rounds_per_iteration(self) -> int:
        return self.K + 1

    def public_keys(self, round_index: int) -> Tuple[str, ...]:
        return ("x",) if round_index == 0 else ("d",)

    @staticmethod
    def penalty_row(ctx: RoundContext) -> dict:
        return {j: (1.0 if j == ctx.node_id else 0.0) - w for j, w in ctx.weights.items()}

    def initialize(self, ctx, objective, x0) -> NnkState:
        return NnkState(x=x0, alpha=self.alpha, epsilon=self.epsilon, K=self.K)

    def update(self, ctx, state: NnkState, publics, objective):
        row = self.penalty_row(ctx)
        if ctx.round_index == 0:
            state, ops = nnk_outer_step(state, {j: p["x"] for j, p in publics.items()}, row, ctx.node_id, objective)
        else:
            state, ops = nnk_inner_step(state, {j: p["d"] for j, p in publics.items()}, row, ctx.node_id,
                                        ctx.round_index - 1)
        ctx.charge(ops)
        if ctx.round_index == self.K:
            state = nnk_apply(state)
        return state


# NEXT
@dataclass(frozen=True)
class NextState(AlgorithmState):
    PUBLIC: ClassVar[Tuple[str, ...]] = ("z", "y")
    PRIVATE: ClassVar[Tuple[str, ...]] = ("x", "grad", "pi", "x_tilde")
    PARAMS: ClassVar[Tuple[str, ...]] = ("alpha0", "mu", "k")
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    grad: np.ndarray
    pi: np.ndarray
    x_tilde: np.ndarray
    alpha0: float
    mu: float = NEXT_STEP_DECAY
    k: int = 0

    @property
    def alpha(self) -> float:
        return next_step_size(self.alpha0, self.mu, self.k)


def next_step_size(alpha0: float, mu: float, k: int) -> float:
    return alpha0 / (1.0 + mu * k)


def default_damping(hessian: np.ndarray) -> float:
    return 1e-6 * (1.0 + float(np.max(np.sum(np.abs(hessian), axis=1), initial=0.0)))


SURROGATE_CACHE_SIZE = 64


def _surrogate_qp(P: np.ndarray, q: np.ndarray, constraints: ConstraintSet,
                  cache: Optional[Dict] = None) -> Tuple[np.ndarray, int]:
    cache = {} if cache is None else cache
    key = (id(constraints), P.tobytes())
    ops = 0
    if key not in cache:
        if len(cache) >= SURROGATE_CACHE_SIZE:
            cache.clear()
        factor, ops = _cholesky(P, "Surrogate curvature")
        cache[key] = factor if constraints.kind == "none" else constraints.qp_solver(P)
    solver = cache[key]
    n = P.shape[0]
    if constraints.kind == "none":
        return cho_solve(solver, -q), ops + 2 * n * n
    result = solver.solve(q)
    return result.x, ops + result.ops


def quadratic_surrogate_argmin(x_anchor: np.ndarray, pi: np.ndarray, objective: LocalObjective,
                               constraints: Optional[ConstraintSet] = None, tau: Optional[float] = None,
                               convexify: bool = False, cache: Optional[Dict] = None) -> np.ndarray:
    """
    argmin over K of (∇f(x_a) + π̃)ᵀ(x − x_a) + ½(x − x_a)ᵀ(∇²f(x_a) + τI)(x − x_a).

    Args:
        x_anchor (np.ndarray): Linearization point x_a.
        pi (np.ndarray): Estimate of the other nodes' gradient sum.
        objective (LocalObjective): The node's cost; must provide Hessians.
        constraints (Optional[ConstraintSet]): K; the objective's own constraint set when omitted.
        tau (Optional[float]): Damping. Defaults to 1e-6·(1 + ‖∇²f‖∞).
        convexify (bool): Raise the damping past the most negative Hessian eigenvalue.
        cache (Optional[Dict]): Factorizations kept across calls with the same curvature.

    Returns:
        np.ndarray: The surrogate minimizer. Solve work is added to the objective's op counter.
    """
    constraints = objective.constraints if constraints is None else constraints
    hessian = objective.hessian(x_anchor)
    damping = default_damping(hessian) if tau is None else float(tau)
    if damping < 0:
        raise ParameterError(f"Surrogate damping must be non-negative, got {damping}")
    if convexify:
        lowest = float(np.linalg.eigvalsh(0.5 * (hessian + hessian.T))[0])
        damping += max(0.0, -lowest)
        objective.ops += hessian.shape[0] ** 3
    P = hessian + damping * np.eye(hessian.shape[0])
    q = objective.gradient(x_anchor) + pi - P @ x_anchor
    try:
        x, ops = _surrogate_qp(P, q, constraints, cache)
    except FactorizationError as e:
        raise ParameterError(f"Quadratic surrogate is indefinite after damping τ={damping:g}: {e}")
    objective.ops += ops
    return x


def linear_surrogate_argmin(x_anchor: np.ndarray, pi: np.ndarray, objective: LocalObjective,
                            constraints: Optional[ConstraintSet] = None, tau: float = NEXT_LINEAR_TAU) -> np.ndarray:
    """Proximal linearization: the projection of x_a − (∇f(x_a) + π̃)/τ onto K."""
    if tau <= 0:
        raise ParameterError(f"Linear surrogate needs τ > 0, got {tau}")
    constraints = objective.constraints if constraints is None else constraints
    point = x_anchor - (objective.gradient(x_anchor) + pi) / tau
    x, ops = constraints.project_with_ops(point)
    objective.ops += ops
    return x


def next_step(state: NextState, neighbor_publics: Mapping[int, Mapping[str, np.ndarray]],
              weights: Mapping[int, float], objective: LocalObjective, num_nodes: int,
              surrogate_argmin) -> NextState:
    """
    One NEXT iteration:

        x  ← Σ w_ij z_j
        y  ← Σ w_ij y_j + ∇f(x_new) − ∇f(x_old)
        π̃ ← N·y − ∇f(x_new)
        x̃ ← argmin_K U(x; x_new, π̃)
        z  ← x + α^(k+1)(x̃ − x)

    `surrogate_argmin(x_anchor, pi, objective)` picks U.
    """
    x = mix({j: p["z"] for j, p in neighbor_publics.items()}, weights)
    grad = ensure_finite(objective.gradient(x), "gradient")
    y = mix({j: p["y"] for j, p in neighbor_publics.items()}, weights) + grad - state.grad
    pi = num_nodes * y - grad
    x_tilde = ensure_finite(surrogate_argmin(x, pi, objective), "surrogate minimizer")
    k = state.k + 1
    alpha = next_step_size(state.alpha0, state.mu, k)
    z = x + alpha * (x_tilde - x)
    return replace(state, x=x, y=y, z=z, grad=grad, pi=pi, x_tilde=x_tilde, k=k)


@dataclass
class NEXT(DistributedAlgorithm):
    """
    NEXT with a quadratic (NEXT-Q) or proximal-linear surrogate. `feasible_set` replaces each
    node's own constraint set as K. `tau` is the proximal weight of either surrogate; `tau=None` keeps
    the quadratic surrogate at the minimal damping 1e-6·(1 + ‖∇²f‖∞). With `lazy` the consensus and
    tracking steps mix through ½(W + I).
    """
    name: ClassVar[str] = "next"
    handles_constraints: ClassVar[bool] = True
    alpha0: float = NEXT_ALPHA0
    mu: float = NEXT_STEP_DECAY
    surrogate: str = "quadratic"
    tau: Optional[float] = NEXT_SURROGATE_TAU
    lazy: bool = True
    convexify: bool = False
    feasible_set: Optional[ConstraintSet] = None
    _caches: Dict[int, Dict] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.surrogate not in SURROGATES:
            raise ParameterError(f"Unknown surrogate '{self.surrogate}', expected one of {SURROGATES}")
        if self.alpha0 < 0 or self.mu < 0:
            raise ParameterError(f"NEXT needs α⁰ ≥ 0 and μ ≥ 0, got α⁰={self.alpha0}, μ={self.mu}")

    @property
    def requires(self):
        if self.surrogate == "quadratic":
            return frozenset({GRADIENT, HESSIAN})
        return frozenset({GRADIENT})

    def public_keys(self, round_index: int) -> Tuple[str, ...]:
        return ("z", "y")

    def surrogate_argmin(self, x_anchor: np.ndarray, pi: np.ndarray, objective: LocalObjective) -> np.ndarray:
        constraints = objective.constraints if self.feasible_set is None else self.feasible_set
        if self.surrogate == "quadratic":
            cache = self._caches.setdefault(id(objective), {})
            return quadratic_surrogate_argmin(x_anchor, pi, objective, constraints, self.tau, self.convexify, cache)
        tau = NEXT_LINEAR_TAU if self.tau is None else self.tau
        return linear_surrogate_argmin(x_anchor, pi, objective, constraints, tau)

    def initialize(self, ctx, objective, x0) -> NextState:
        grad = ensure_finite(objective.gradient(x0), "gradient")
        y = grad.copy()
        pi = ctx.num_nodes * y - grad
        x_tilde = self.surrogate_argmin(x0, pi, objective)
        z = x0 + self.alpha0 * (x_tilde - x0)
        return NextState(x=x0, y=y, z=z, grad=grad, pi=pi, x_tilde=x_tilde, alpha0=self.alpha0, mu=self.mu)

    def update(self, ctx, state, publics, objective):
        weights = lazy_weights(ctx.weights, ctx.node_id) if self.lazy else ctx.weights
        return next_step(state, publics, weights, objective, ctx.num_nodes, self.surrogate_argmin)

    def parameters(self):
        params = {"alpha0": self.alpha0, "mu": self.mu}
        if self.tau is not None:
            params["tau"] = self.tau
        return params
