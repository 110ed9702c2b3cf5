from typing import Dict, List, Optional, Sequence, Tuple

from dataclasses import dataclass, field

import logging
import numpy as np

from src.core import ConstraintSet, ProblemInstance
from src.errors import InstanceError, InnerSolverError
from src.objectives import QuadraticObjective
from src.qp_solver import QpSolver

logger = logging.getLogger(__name__)

AERIAL = "aerial"
GROUND = "ground"


def double_integrator(pos_dim: int, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """(A, B) of p' = p + dt·v + ½dt²·u, v' = v + dt·u."""
    I = np.eye(pos_dim)
    Z = np.zeros((pos_dim, pos_dim))
    A = np.block([[I, dt * I], [Z, I]])
    B = np.vstack([0.5 * dt * dt * I, dt * I])
    return A, B


@dataclass(frozen=True)
class RobotLayout:
    """Where one robot's states s_0..s_T and controls u_0..u_{T-1} sit inside Z."""
    kind: str
    offset: int
    pos_dim: int
    horizon: int

    @property
    def state_dim(self) -> int:
        return 2 * self.pos_dim

    @property
    def control_dim(self) -> int:
        return self.pos_dim

    @property
    def size(self) -> int:
        return (self.horizon + 1) * self.state_dim + self.horizon * self.control_dim

    def state(self, t: int) -> np.ndarray:
        start = self.offset + t * self.state_dim
        return np.arange(start, start + self.state_dim)

    def position(self, t: int) -> np.ndarray:
        return self.state(t)[:self.pos_dim]

    def velocity(self, t: int) -> np.ndarray:
        return self.state(t)[self.pos_dim:]

    def control(self, t: int) -> np.ndarray:
        start = self.offset + (self.horizon + 1) * self.state_dim + t * self.control_dim
        return np.arange(start, start + self.control_dim)

    def controls(self) -> np.ndarray:
        return np.concatenate([self.control(t) for t in range(self.horizon)])


class _RowBuilder:
    def __init__(self, dim: int):
        self.dim = dim
        self.rows: List[np.ndarray] = []
        self.rhs: List[float] = []

    def add(self, coeffs: Dict[int, float], value: float):
        row = np.zeros(self.dim)
        for index, c in coeffs.items():
            row[index] += c
        self.rows.append(row)
        self.rhs.append(value)

    def build(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.rows:
            return np.zeros((0, self.dim)), np.zeros(0)
        return np.vstack(self.rows), np.array(self.rhs)


@dataclass
class DeliveryInstance:
    """
    Aerial robots (3-D double integrators) pick up packages from ground robots (2-D double
    integrators confined to a zone). Robots 0..N-1 are aerial, N..N+M-1 are ground. Every robot
    moves rest-to-rest between fixed stations and pays uᵀQu for its own controls.
    """
    num_aerial: int
    num_ground: int
    horizon: int
    dt: float
    aerial_weights: np.ndarray
    ground_weights: np.ndarray
    aerial_starts: np.ndarray
    aerial_ends: np.ndarray
    ground_starts: np.ndarray
    ground_ends: np.ndarray
    meetings: List[Tuple[int, int, int]]
    zone: Optional[np.ndarray] = None
    max_speed: Optional[float] = None
    max_control: Optional[float] = None
    _solution: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.layouts: List[RobotLayout] = []
        offset = 0
        for r in range(self.num_robots):
            kind, pos_dim = (AERIAL, 3) if r < self.num_aerial else (GROUND, 2)
            layout = RobotLayout(kind, offset, pos_dim, self.horizon)
            self.layouts.append(layout)
            offset += layout.size
        self.dim = offset

    @property
    def num_robots(self) -> int:
        return self.num_aerial + self.num_ground

    def ground_index(self, j: int) -> int:
        return self.num_aerial + j

    def weights(self, robot: int) -> np.ndarray:
        if robot < self.num_aerial:
            return self.aerial_weights[robot]
        return self.ground_weights[robot - self.num_aerial]

    def station(self, robot: int) -> Tuple[np.ndarray, np.ndarray]:
        if robot < self.num_aerial:
            return self.aerial_starts[robot], self.aerial_ends[robot]
        j = robot - self.num_aerial
        return self.ground_starts[j], self.ground_ends[j]

    # constraints
    def _own_rows(self, robot: int, builder: _RowBuilder):
        layout = self.layouts[robot]
        A, B = double_integrator(layout.pos_dim, self.dt)
        start, end = self.station(robot)
        d = layout.state_dim

        for k in range(d):
            builder.add({layout.state(0)[k]: 1.0}, float(start[k]) if k < layout.pos_dim else 0.0)
            builder.add({layout.state(self.horizon)[k]: 1.0}, float(end[k]) if k < layout.pos_dim else 0.0)
        for t in range(self.horizon):
            s, s_next, u = layout.state(t), layout.state(t + 1), layout.control(t)
            for k in range(d):
                coeffs = {s_next[k]: 1.0}
                for m in range(d):
                    if A[k, m] != 0.0:
                        coeffs[s[m]] = coeffs.get(s[m], 0.0) - A[k, m]
                for m in range(layout.control_dim):
                    if B[k, m] != 0.0:
                        coeffs[u[m]] = coeffs.get(u[m], 0.0) - B[k, m]
                builder.add(coeffs, 0.0)

    def _meeting_rows(self, aerial: int, ground: int, t: int, builder: _RowBuilder):
        pa = self.layouts[aerial].position(t)
        pg = self.layouts[self.ground_index(ground)].position(t)
        builder.add({pa[0]: 1.0, pg[0]: -1.0}, 0.0)
        builder.add({pa[1]: 1.0, pg[1]: -1.0}, 0.0)
        builder.add({pa[2]: 1.0}, 0.0)

    def _bounds(self, robots: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        lower = np.full(self.dim, -np.inf)
        upper = np.full(self.dim, np.inf)
        for robot in robots:
            if robot < self.num_aerial:
                continue
            layout = self.layouts[robot]
            for t in range(self.horizon + 1):
                if self.zone is not None:
                    p = layout.position(t)
                    lower[p] = [self.zone[0], self.zone[2]]
                    upper[p] = [self.zone[1], self.zone[3]]
                if self.max_speed is not None:
                    v = layout.velocity(t)
                    lower[v] = -self.max_speed
                    upper[v] = self.max_speed
            if self.max_control is not None:
                u = layout.controls()
                lower[u] = -self.max_control
                upper[u] = self.max_control
        return lower, upper

    def local_constraints(self, robot: int) -> ConstraintSet:
        """Dynamics, stations and boxes of the robot plus every meeting it takes part in."""
        builder = _RowBuilder(self.dim)
        self._own_rows(robot, builder)
        for i, j, t in self.meetings:
            if robot == i or robot == self.ground_index(j):
                self._meeting_rows(i, j, t, builder)
        A, b = builder.build()
        lower, upper = self._bounds([robot])
        return ConstraintSet(self.dim, lower=lower, upper=upper, eq_matrix=A, eq_vector=b)

    def feasible_set(self) -> ConstraintSet:
        builder = _RowBuilder(self.dim)
        for robot in range(self.num_robots):
            self._own_rows(robot, builder)
        for i, j, t in self.meetings:
            self._meeting_rows(i, j, t, builder)
        A, b = builder.build()
        lower, upper = self._bounds(range(self.num_robots))
        return ConstraintSet(self.dim, lower=lower, upper=upper, eq_matrix=A, eq_vector=b)

    # costs
    def energy_hessian(self, robot: int) -> np.ndarray:
        """Hessian of uᵀQu for one robot, embedded in Z."""
        H = np.zeros((self.dim, self.dim))
        layout = self.layouts[robot]
        w = self.weights(robot)
        for t in range(self.horizon):
            u = layout.control(t)
            H[u, u] = 2.0 * w
        return H

    def local_objectives(self, constrained: bool = True) -> List[QuadraticObjective]:
        return [QuadraticObjective(self.energy_hessian(r), np.zeros(self.dim), 0.0,
                                   self.local_constraints(r) if constrained else None)
                for r in range(self.num_robots)]

    def global_cost(self, Z: np.ndarray) -> float:
        Z = np.asarray(Z, dtype=float)
        cost = 0.0
        for robot, layout in enumerate(self.layouts):
            w = self.weights(robot)
            for t in range(self.horizon):
                u = Z[layout.control(t)]
                cost += float(u @ (w * u))
        return cost

    def violation_report(self, Z: np.ndarray) -> Dict[str, float]:
        """Largest violation per constraint family."""
        Z = np.asarray(Z, dtype=float)
        dynamics = 0.0
        for robot in range(self.num_robots):
            builder = _RowBuilder(self.dim)
            self._own_rows(robot, builder)
            A, b = builder.build()
            dynamics = max(dynamics, float(np.max(np.abs(A @ Z - b))))
        meetings = 0.0
        for i, j, t in self.meetings:
            builder = _RowBuilder(self.dim)
            self._meeting_rows(i, j, t, builder)
            A, b = builder.build()
            meetings = max(meetings, float(np.max(np.abs(A @ Z - b))))
        lower, upper = self._bounds(range(self.num_robots))
        boxes = float(max(np.max(np.maximum(lower - Z, 0.0)), np.max(np.maximum(Z - upper, 0.0))))
        return {"dynamics_and_stations": dynamics, "meetings": meetings, "boxes": boxes}

    def solution(self) -> np.ndarray:
        if self._solution is None:
            self._solution = centralized_qp_solve(self)
        return self._solution

    def to_problem(self, name: str = "delivery") -> ProblemInstance:
        starts = np.vstack([self.aerial_starts[:, :2], self.ground_starts]) if self.num_ground else self.aerial_starts[:, :2]
        return ProblemInstance(
            name=name,
            objectives=self.local_objectives(),
            reference=self.solution(),
            feasible_set=self.feasible_set(),
            positions=starts,
            document=self.to_document(),
        )

    def to_document(self) -> dict:
        return {
            "kind": "delivery",
            "num_aerial": self.num_aerial,
            "num_ground": self.num_ground,
            "horizon": self.horizon,
            "dt": self.dt,
            "aerial_weights": self.aerial_weights.tolist(),
            "ground_weights": self.ground_weights.tolist(),
            "aerial_starts": self.aerial_starts.tolist(),
            "aerial_ends": self.aerial_ends.tolist(),
            "ground_starts": self.ground_starts.tolist(),
            "ground_ends": self.ground_ends.tolist(),
            "meetings": [list(m) for m in self.meetings],
            "zone": None if self.zone is None else self.zone.tolist(),
            "max_speed": self.max_speed,
            "max_control": self.max_control,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "DeliveryInstance":
        return cls(
            num_aerial=doc["num_aerial"],
            num_ground=doc["num_ground"],
            horizon=doc["horizon"],
            dt=doc["dt"],
            aerial_weights=np.array(doc["aerial_weights"], dtype=float).reshape(-1, 3),
            ground_weights=np.array(doc["ground_weights"], dtype=float).reshape(-1, 2),
            aerial_starts=np.array(doc["aerial_starts"], dtype=float).reshape(-1, 3),
            aerial_ends=np.array(doc["aerial_ends"], dtype=float).reshape(-1, 3),
            ground_starts=np.array(doc["ground_starts"], dtype=float).reshape(-1, 2),
            ground_ends=np.array(doc["ground_ends"], dtype=float).reshape(-1, 2),
            meetings=[tuple(m) for m in doc["meetings"]],
            zone=None if doc["zone"] is None else np.array(doc["zone"], dtype=float),
            max_speed=doc["max_speed"],
            max_control=doc["max_control"],
        )


def _rest_to_rest_line(start: np.ndarray, end: np.ndarray, horizon: int, dt: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimum-energy rest-to-rest double-integrator motion along the segment start → end."""
    A, B = double_integrator(1, dt)
    # 1-D problem: min Σu² s.t. s_T = (1, 0) from s_0 = (0, 0); s_T = Σ A^{T-1-t} B u_t
    G = np.hstack([np.linalg.matrix_power(A, horizon - 1 - t) @ B for t in range(horizon)])
    u = G.T @ np.linalg.solve(G @ G.T, np.array([1.0, 0.0]))
    s = np.zeros((horizon + 1, 2))
    for t in range(horizon):
        s[t + 1] = A @ s[t] + B[:, 0] * u[t]
    direction = np.asarray(end, dtype=float) - np.asarray(start, dtype=float)
    positions = np.asarray(start, dtype=float) + np.outer(s[:, 0], direction)
    velocities = np.outer(s[:, 1], direction)
    controls = np.outer(u, direction)
    return positions, velocities, controls


def check_schedule(instance: DeliveryInstance):
    """
    Verify the meeting schedule and that each ground robot's straight-line trajectory fits its boxes,
    which together with unconstrained aerial controls makes the feasible set nonempty.
    """
    N, M, T = instance.num_aerial, instance.num_ground, instance.horizon
    seen: Dict[Tuple[int, int], int] = {}
    for i, j, t in instance.meetings:
        if not (0 <= i < N and 0 <= j < M):
            raise InstanceError(f"Meeting ({i}, {j}) references an unknown robot")
        if not (1 <= t <= T - 1):
            raise InstanceError(f"Meeting of aerial {i} and ground {j} at t={t} is outside 1..{T - 1}")
        if (i, t) in seen and seen[(i, t)] != j:
            raise InstanceError(f"Aerial {i} cannot meet ground {seen[(i, t)]} and ground {j} both at t={t}")
        seen[(i, t)] = j

    for j in range(M):
        start, end = instance.ground_starts[j], instance.ground_ends[j]
        positions, velocities, controls = _rest_to_rest_line(start, end, T, instance.dt)
        if instance.zone is not None:
            zone = instance.zone
            inside = ((positions[:, 0] >= zone[0] - 1e-12) & (positions[:, 0] <= zone[1] + 1e-12)
                      & (positions[:, 1] >= zone[2] - 1e-12) & (positions[:, 1] <= zone[3] + 1e-12))
            if not inside.all():
                raise InstanceError(f"Ground robot {j} stations are outside its zone")
        if instance.max_speed is not None and np.max(np.abs(velocities)) > instance.max_speed:
            raise InstanceError(f"Ground robot {j} cannot reach its end station within the speed limit")
        if instance.max_control is not None and np.max(np.abs(controls)) > instance.max_control:
            raise InstanceError(f"Ground robot {j} cannot reach its end station within the control limit")


def default_meetings(num_aerial: int, num_ground: int, horizon: int) -> List[Tuple[int, int, int]]:
    """Aerial i meets ground i mod M once, at times spread over 1..T-1."""
    if num_ground == 0:
        return []
    return [(i, i % num_ground, max(1, min(horizon - 1, (i + 1) * horizon // (num_aerial + 1))))
            for i in range(num_aerial)]


def build_delivery_instance(num_aerial: int = 3,
                            num_ground: int = 2,
                            horizon: int = 8,
                            meetings: Optional[List[Tuple[int, int, int]]] = None,
                            seed: int = 0,
                            dt: float = 1.0,
                            zone: Optional[Sequence[float]] = (-1.0, 1.0, -1.0, 1.0),
                            max_speed: Optional[float] = 1.0,
                            max_control: Optional[float] = 1.0,
                            aerial_starts: Optional[np.ndarray] = None,
                            aerial_ends: Optional[np.ndarray] = None,
                            ground_starts: Optional[np.ndarray] = None,
                            ground_ends: Optional[np.ndarray] = None) -> DeliveryInstance:
    """
    Assemble a package-delivery instance.

    Args:
        num_aerial (int): Number of aerial robots N.
        num_ground (int): Number of ground robots M.
        horizon (int): Number of control steps T.
        meetings (Optional[List[Tuple[int, int, int]]]): (aerial, ground, t) triples; spread defaults when omitted.
        seed (int): Seed for stations and control weights.
        dt (float): Sampling interval.
        zone (Optional[Sequence[float]]): Ground zone (xmin, xmax, ymin, ymax); None disables it.
        max_speed (Optional[float]): Ground velocity bound per axis; None disables it.
        max_control (Optional[float]): Ground control bound per axis; None disables it.
        aerial_starts, aerial_ends, ground_starts, ground_ends: Explicit stations.

    Returns:
        DeliveryInstance: A feasible instance.
    """
    if num_aerial < 1 or num_ground < 0:
        raise InstanceError(f"Invalid robot counts N={num_aerial}, M={num_ground}")
    if horizon < 2:
        raise InstanceError(f"Horizon must be at least 2, got {horizon}")

    rng = np.random.default_rng(seed)

    def ring(count: int) -> np.ndarray:
        angles = rng.uniform(0, 2 * np.pi, size=count)
        radius = rng.uniform(1.5, 2.5, size=count)
        return np.column_stack([radius * np.cos(angles), radius * np.sin(angles), rng.uniform(0.5, 1.5, size=count)])

    inner = 0.8 if zone is None else 0.8 * min(abs(zone[0]), abs(zone[1]), abs(zone[2]), abs(zone[3]))
    aerial_starts = ring(num_aerial) if aerial_starts is None else np.asarray(aerial_starts, dtype=float)
    aerial_ends = ring(num_aerial) if aerial_ends is None else np.asarray(aerial_ends, dtype=float)
    ground_starts = (rng.uniform(-inner, inner, size=(num_ground, 2)) if ground_starts is None
                     else np.asarray(ground_starts, dtype=float))
    ground_ends = (rng.uniform(-inner, inner, size=(num_ground, 2)) if ground_ends is None
                   else np.asarray(ground_ends, dtype=float))

    instance = DeliveryInstance(
        num_aerial=num_aerial,
        num_ground=num_ground,
        horizon=horizon,
        dt=dt,
        aerial_weights=rng.uniform(0.5, 1.5, size=(num_aerial, 3)),
        ground_weights=rng.uniform(0.5, 1.5, size=(num_ground, 2)),
        aerial_starts=aerial_starts.reshape(-1, 3),
        aerial_ends=aerial_ends.reshape(-1, 3),
        ground_starts=ground_starts.reshape(-1, 2),
        ground_ends=ground_ends.reshape(-1, 2),
        meetings=list(default_meetings(num_aerial, num_ground, horizon) if meetings is None else meetings),
        zone=None if zone is None else np.asarray(zone, dtype=float),
        max_speed=max_speed,
        max_control=max_control,
    )
    check_schedule(instance)
    logger.info(f"Built delivery instance: N={num_aerial}, M={num_ground}, T={horizon}, "
                f"dim={instance.dim}, meetings={instance.meetings}")
    return instance


def centralized_qp_solve(instance: DeliveryInstance, tol: float = 1e-8) -> np.ndarray:
    """
    Minimize the total control energy over the joint feasible set.

    Returns:
        np.ndarray: Z* with KKT residual below `tol`.
    """
    P = sum(instance.energy_hessian(r) for r in range(instance.num_robots))
    feasible = instance.feasible_set()
    solver = QpSolver(P, feasible.eq_matrix, feasible.eq_vector, feasible.lower, feasible.upper, tol=tol * 1e-2)
    try:
        result = solver.solve(np.zeros(instance.dim))
    except InnerSolverError as e:
        raise InstanceError(f"Delivery oracle failed: {e}")
    if result.residual > tol:
        raise InstanceError(f"Delivery oracle KKT residual {result.residual:.3e} above {tol:.1e}")
    return result.x
