from typing import FrozenSet, List, Optional, Tuple

from dataclasses import dataclass, field

import logging
import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.optimize import least_squares
from tqdm import tqdm

from src.core import ARGMIN, GRADIENT, HESSIAN, ArgminSolver, LocalObjective, ProblemInstance
from src.errors import FactorizationError, InnerSolverError, InstanceError
from src.vars import GAUSS_NEWTON_GTOL, RANGE_SINGULARITY_EPS

logger = logging.getLogger(__name__)

LM_TOL = 1e-15


class RangeObjective(LocalObjective):
    """
    Σ_terms (w²/2)(‖p − x_k‖ − d)² over one robot's range measurements. The decision vector stacks
    every landmark estimate, x = (x_0, …, x_{m-1}) with x_k ∈ ℝ².
    """

    def __init__(self,
                 num_landmarks: int,
                 landmark_index: np.ndarray,
                 positions: np.ndarray,
                 ranges: np.ndarray,
                 weights: np.ndarray,
                 eps: float = RANGE_SINGULARITY_EPS):
        super().__init__(2 * num_landmarks)
        self.num_landmarks = num_landmarks
        self.landmark_index = np.asarray(landmark_index, dtype=int).reshape(-1)
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        self.ranges = np.asarray(ranges, dtype=float).reshape(-1)
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        self.eps = eps

    @property
    def capabilities(self) -> FrozenSet[str]:
        return frozenset({GRADIENT, HESSIAN, ARGMIN})

    @property
    def num_terms(self) -> int:
        return self.ranges.shape[0]

    @property
    def value_cost(self) -> int:
        return 8 * self.num_terms

    @property
    def gradient_cost(self) -> int:
        return 12 * self.num_terms + self.dim

    @property
    def hessian_cost(self) -> int:
        return 20 * self.num_terms + self.dim * self.dim

    def _geometry(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Offsets x_k − p, distances and unit directions (zero below the singularity guard)."""
        landmarks = x.reshape(self.num_landmarks, 2)
        offsets = landmarks[self.landmark_index] - self.positions
        dist = np.linalg.norm(offsets, axis=1)
        safe = dist >= self.eps
        units = np.zeros_like(offsets)
        units[safe] = offsets[safe] / dist[safe, None]
        return offsets, dist, units

    def residuals(self, x: np.ndarray) -> np.ndarray:
        _, dist, _ = self._geometry(np.asarray(x, dtype=float))
        return self.weights * (dist - self.ranges)

    def residual_jacobian(self, x: np.ndarray) -> np.ndarray:
        _, _, units = self._geometry(np.asarray(x, dtype=float))
        J = np.zeros((self.num_terms, self.dim))
        rows = np.arange(self.num_terms)
        J[rows, 2 * self.landmark_index] = self.weights * units[:, 0]
        J[rows, 2 * self.landmark_index + 1] = self.weights * units[:, 1]
        return J

    def _value(self, x: np.ndarray) -> float:
        r = self.residuals(x)
        return float(0.5 * r @ r)

    def _gradient(self, x: np.ndarray) -> np.ndarray:
        _, dist, units = self._geometry(x)
        coeff = self.weights ** 2 * (dist - self.ranges)
        grad = np.zeros((self.num_landmarks, 2))
        np.add.at(grad, self.landmark_index, coeff[:, None] * units)
        return grad.reshape(-1)

    def _hessian(self, x: np.ndarray) -> np.ndarray:
        _, dist, units = self._geometry(x)
        H = np.zeros((self.dim, self.dim))
        for term in range(self.num_terms):
            if dist[term] < self.eps:
                continue
            u = units[term]
            w2 = self.weights[term] ** 2
            outer = np.outer(u, u)
            block = w2 * (outer + (dist[term] - self.ranges[term]) / dist[term] * (np.eye(2) - outer))
            k = self.landmark_index[term]
            H[2 * k:2 * k + 2, 2 * k:2 * k + 2] += block
        return H

    def argmin_solver(self, quad: np.ndarray) -> ArgminSolver:
        return RangeArgminSolver(self, quad)

    def to_document(self) -> dict:
        return {
            "type": "range",
            "num_landmarks": self.num_landmarks,
            "landmark_index": self.landmark_index.tolist(),
            "positions": self.positions.tolist(),
            "ranges": self.ranges.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "RangeObjective":
        return cls(doc["num_landmarks"], np.array(doc["landmark_index"], dtype=int),
                   np.array(doc["positions"], dtype=float), np.array(doc["ranges"], dtype=float),
                   np.array(doc["weights"], dtype=float))


class RangeArgminSolver(ArgminSolver):
    """
    Levenberg-Marquardt on the range residuals stacked with the square-completed quadratic
    ½xᵀQx + cᵀx = ½‖Lᵀx + L⁻¹c‖² − const, where Q = LLᵀ. Warm-starts from the caller's iterate.
    """

    def __init__(self, objective: RangeObjective, quad: np.ndarray, gtol: float = GAUSS_NEWTON_GTOL):
        self.objective = objective
        self.quad = np.asarray(quad, dtype=float)
        self.gtol = gtol
        try:
            self._L = cholesky(self.quad, lower=True)
        except LinAlgError as e:
            raise FactorizationError(f"Penalty matrix of the range argmin is not positive definite: {e}")
        self._last: Optional[np.ndarray] = None

    def solve(self, linear: np.ndarray, warm: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int]:
        obj = self.objective
        shift = solve_triangular(self._L, linear, lower=True)
        LT = self._L.T

        def fun(x):
            return np.concatenate([obj.residuals(x), LT @ x + shift])

        def jac(x):
            return np.vstack([obj.residual_jacobian(x), LT])

        if warm is not None:
            x0 = np.asarray(warm, dtype=float)
        elif self._last is not None:
            x0 = self._last
        else:
            x0 = -np.linalg.solve(self.quad, linear)

        scale = 1.0 + float(np.max(np.abs(linear)))
        ops = obj.dim ** 3
        x, residual = x0, np.inf
        for start in (x0, -np.linalg.solve(self.quad, linear)):
            result = least_squares(fun, start, jac=jac, method="lm", xtol=LM_TOL, ftol=LM_TOL, gtol=LM_TOL)
            ops += int(result.nfev) * (obj.gradient_cost + 2 * obj.dim * obj.dim)
            grad = obj._gradient(result.x) + self.quad @ result.x + linear
            if float(np.max(np.abs(grad))) < residual:
                x, residual = result.x, float(np.max(np.abs(grad)))
            if residual <= self.gtol * scale:
                break
        if residual > self.gtol * scale:
            raise InnerSolverError("range argmin did not reach stationarity", best=x, residual=residual)
        self._last = x
        return x, ops


@dataclass
class MappingInstance:
    num_robots: int
    num_landmarks: int
    horizon: int
    tracks: np.ndarray
    landmarks: np.ndarray
    measurement_sets: List[List[List[int]]]
    ranges: List[List[np.ndarray]]
    weights: np.ndarray
    noise_std: float
    _solution: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return 2 * self.num_landmarks

    def local_objectives(self) -> List[RangeObjective]:
        objectives = []
        for i in range(self.num_robots):
            index, positions, ranges, weights = [], [], [], []
            for k in range(self.num_landmarks):
                for row, t in enumerate(self.measurement_sets[i][k]):
                    index.append(k)
                    positions.append(self.tracks[i, t])
                    ranges.append(self.ranges[i][k][row])
                    weights.append(self.weights[i, k])
            objectives.append(RangeObjective(self.num_landmarks, np.array(index, dtype=int),
                                             np.array(positions).reshape(-1, 2), np.array(ranges), np.array(weights)))
        return objectives

    def landmark_objective(self, k: int) -> RangeObjective:
        """All measurements of landmark k, as a cost over that landmark alone."""
        positions, ranges, weights = [], [], []
        for i in range(self.num_robots):
            for row, t in enumerate(self.measurement_sets[i][k]):
                positions.append(self.tracks[i, t])
                ranges.append(self.ranges[i][k][row])
                weights.append(self.weights[i, k])
        return RangeObjective(1, np.zeros(len(ranges), dtype=int), np.array(positions).reshape(-1, 2),
                              np.array(ranges), np.array(weights))

    def global_cost(self, x: np.ndarray) -> float:
        landmarks = np.asarray(x, dtype=float).reshape(self.num_landmarks, 2)
        cost = 0.0
        for i in range(self.num_robots):
            for k in range(self.num_landmarks):
                for row, t in enumerate(self.measurement_sets[i][k]):
                    r = np.linalg.norm(self.tracks[i, t] - landmarks[k]) - self.ranges[i][k][row]
                    cost += 0.5 * self.weights[i, k] ** 2 * r * r
        return float(cost)

    def solution(self, starts: int = 8, seed: int = 0) -> np.ndarray:
        if self._solution is None:
            self._solution = centralized_mapping_solve(self, starts=starts, seed=seed)
        return self._solution

    def to_problem(self, name: str = "mapping", starts: int = 8, seed: int = 0) -> ProblemInstance:
        return ProblemInstance(
            name=name,
            objectives=self.local_objectives(),
            reference=self.solution(starts, seed),
            ground_truth=self.landmarks.reshape(-1),
            positions=self.tracks[:, 0, :],
            document=self.to_document(),
        )

    def to_document(self) -> dict:
        return {
            "kind": "mapping",
            "num_robots": self.num_robots,
            "num_landmarks": self.num_landmarks,
            "horizon": self.horizon,
            "tracks": self.tracks.tolist(),
            "landmarks": self.landmarks.tolist(),
            "measurement_sets": self.measurement_sets,
            "ranges": [[r.tolist() for r in per_robot] for per_robot in self.ranges],
            "weights": self.weights.tolist(),
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "MappingInstance":
        return cls(
            num_robots=doc["num_robots"],
            num_landmarks=doc["num_landmarks"],
            horizon=doc["horizon"],
            tracks=np.array(doc["tracks"], dtype=float),
            landmarks=np.array(doc["landmarks"], dtype=float),
            measurement_sets=[[list(s) for s in per_robot] for per_robot in doc["measurement_sets"]],
            ranges=[[np.array(r, dtype=float) for r in per_robot] for per_robot in doc["ranges"]],
            weights=np.array(doc["weights"], dtype=float),
            noise_std=doc["noise_std"],
        )


def _is_diverse(points: np.ndarray, tol: float = 1e-6) -> bool:
    """At least three non-collinear points."""
    if points.shape[0] < 3:
        return False
    centered = points - points.mean(axis=0)
    return bool(np.linalg.svd(centered, compute_uv=False)[-1] > tol)


def build_mapping_instance(num_robots: int,
                           num_landmarks: int,
                           horizon: int = 10,
                           noise_std: float = 0.05,
                           seed: int = 0,
                           sensing_range: Optional[float] = None,
                           weights: float = 1.0,
                           arena: float = 3.0,
                           track_radius: float = 1.0) -> MappingInstance:
    """
    Robots drive circular tracks and range landmarks scattered over the arena.

    Args:
        num_robots (int): Number of robots n.
        num_landmarks (int): Number of landmarks m.
        horizon (int): Number of measurement times T.
        noise_std (float): Range noise standard deviation σ.
        seed (int): Seed for tracks, landmarks and noise.
        sensing_range (Optional[float]): Maximum measured range; every pair is measured when None.
        weights (float): Weight w_ik applied to every term.
        arena (float): Landmarks are drawn from [−arena, arena]².
        track_radius (float): Radius of the robots' circular tracks.

    Returns:
        MappingInstance: Instance whose landmarks are each seen from three non-collinear positions.
    """
    if num_robots < 1 or num_landmarks < 1:
        raise InstanceError(f"Need at least one robot and one landmark, got n={num_robots}, m={num_landmarks}")
    if horizon < 1:
        raise InstanceError(f"Horizon must be positive, got {horizon}")

    rng = np.random.default_rng(seed)
    centers = rng.uniform(-arena / 2, arena / 2, size=(num_robots, 2))
    phases = rng.uniform(0, 2 * np.pi, size=num_robots)
    angle_step = 2 * np.pi / max(horizon, 3)
    times = np.arange(horizon)
    tracks = np.zeros((num_robots, horizon, 2))
    for i in range(num_robots):
        angles = phases[i] + angle_step * times
        tracks[i] = centers[i] + track_radius * np.column_stack([np.cos(angles), np.sin(angles)])

    landmarks = rng.uniform(-arena, arena, size=(num_landmarks, 2))

    measurement_sets, ranges = [], []
    for i in range(num_robots):
        sets_i, ranges_i = [], []
        for k in range(num_landmarks):
            dist = np.linalg.norm(tracks[i] - landmarks[k], axis=1)
            steps = [int(t) for t in times if sensing_range is None or dist[t] <= sensing_range]
            noisy = dist[steps] + noise_std * rng.standard_normal(len(steps))
            sets_i.append(steps)
            ranges_i.append(np.maximum(noisy, 0.0))
        measurement_sets.append(sets_i)
        ranges.append(ranges_i)

    for k in range(num_landmarks):
        seen = [tracks[i, t] for i in range(num_robots) for t in measurement_sets[i][k]]
        if not seen:
            raise InstanceError(f"Landmark {k} is not measured by any robot")
        if not _is_diverse(np.array(seen)):
            raise InstanceError(f"Landmark {k} is not measured from three non-collinear positions")

    instance = MappingInstance(
        num_robots=num_robots,
        num_landmarks=num_landmarks,
        horizon=horizon,
        tracks=tracks,
        landmarks=landmarks,
        measurement_sets=measurement_sets,
        ranges=ranges,
        weights=np.full((num_robots, num_landmarks), float(weights)),
        noise_std=noise_std,
    )
    logger.info(f"Built mapping instance: n={num_robots}, m={num_landmarks}, T={horizon}, sigma={noise_std}")
    return instance


def _start_point(seed: int, index: int, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    # one generator per start index keeps the first `s` starts identical for every s
    return np.random.default_rng([seed, index]).uniform(low, high)


def centralized_mapping_solve(instance: MappingInstance, starts: int = 8, seed: int = 0,
                              gtol: float = GAUSS_NEWTON_GTOL) -> np.ndarray:
    """
    Best-of-multi-start Levenberg-Marquardt. The cost separates over landmarks, so every landmark
    is solved on its own and the lowest-cost stationary point is kept.

    Args:
        instance (MappingInstance): Instance to solve.
        starts (int): Number of initializations per landmark (at least 8).
        seed (int): Seed of the start points.
        gtol (float): Stationarity tolerance on the gradient infinity norm.

    Returns:
        np.ndarray: Stacked landmark estimates.
    """
    if starts < 8:
        raise ValueError(f"The mapping oracle needs at least 8 starts, got {starts}")

    everything = instance.tracks.reshape(-1, 2)
    margin = 2.0 * float(np.max(np.abs(everything))) + 1.0
    low, high = -np.full(2, margin), np.full(2, margin)

    solution = np.zeros(instance.dim)
    landmarks = tqdm(range(instance.num_landmarks), desc="mapping oracle", leave=False,
                     disable=not logger.isEnabledFor(logging.INFO))
    for k in landmarks:
        objective = instance.landmark_objective(k)
        best_x, best_cost, best_residual = None, np.inf, np.inf
        for s in range(starts):
            x0 = _start_point(seed, k * 1_000_003 + s, low, high)
            result = least_squares(objective.residuals, x0, jac=objective.residual_jacobian,
                                   method="lm", xtol=LM_TOL, ftol=LM_TOL, gtol=LM_TOL)
            residual = float(np.max(np.abs(objective._gradient(result.x))))
            cost = objective._value(result.x)
            if residual <= gtol and cost < best_cost:
                best_x, best_cost, best_residual = result.x, cost, residual
            elif best_x is None and residual < best_residual:
                best_residual = residual
        if best_x is None:
            raise InstanceError(f"No start reached stationarity for landmark {k} (best residual {best_residual:.3e})")
        solution[2 * k:2 * k + 2] = best_x
        logger.debug(f"Landmark {k}: cost {best_cost:.3e}, gradient {best_residual:.1e}")
    return solution
