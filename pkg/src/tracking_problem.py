from typing import List, Optional, Tuple

from dataclasses import dataclass, field

import logging
import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve

from src.core import ProblemInstance, ReducedDecomposition
from src.errors import InstanceError
from src.graph import CommGraph
from src.objectives import QuadraticObjective, least_squares_objective

logger = logging.getLogger(__name__)

STATE_DIM = 4
MEAS_DIM = 2
OBSERVATION_MATRIX = np.array([[1.0, 0.0, 0.0, 0.0],
                               [0.0, 1.0, 0.0, 0.0]])


def dynamics_matrix(dt: float) -> np.ndarray:
    """Constant-velocity model on (px, py, vx, vy)."""
    A = np.eye(STATE_DIM)
    A[0, 2] = dt
    A[1, 3] = dt
    return A


def selection_matrix(steps: List[int], horizon: int) -> np.ndarray:
    """One-hot rows G_i for the (1-based) timesteps in `steps`."""
    G = np.zeros((len(steps), horizon))
    for row, t in enumerate(steps):
        G[row, t - 1] = 1.0
    return G


def transition_matrix(horizon: int, A: np.ndarray) -> np.ndarray:
    """P_i: identity blocks on the diagonal and −A on the block subdiagonal."""
    d = A.shape[0]
    P = np.eye(d * horizon)
    for t in range(1, horizon):
        P[t * d:(t + 1) * d, (t - 1) * d:t * d] = -A
    return P


def unicycle_path(start: np.ndarray, waypoints: np.ndarray, steps: int, dt: float,
                  speed: float, max_turn_rate: float, capture_radius: float = 0.2) -> np.ndarray:
    """
    Integrate a constant-speed unicycle that turns toward each waypoint in turn.

    Returns:
        np.ndarray: (steps, 4) array of (px, py, vx, vy).
    """
    px, py, heading = float(start[0]), float(start[1]), float(start[2])
    target = 0
    states = np.zeros((steps, STATE_DIM))
    for t in range(steps):
        states[t] = [px, py, speed * np.cos(heading), speed * np.sin(heading)]
        if target < len(waypoints) and np.hypot(waypoints[target, 0] - px, waypoints[target, 1] - py) < capture_radius:
            target += 1
        if target < len(waypoints):
            desired = np.arctan2(waypoints[target, 1] - py, waypoints[target, 0] - px)
            error = (desired - heading + np.pi) % (2 * np.pi) - np.pi
            heading += float(np.clip(error, -max_turn_rate * dt, max_turn_rate * dt))
        px += speed * np.cos(heading) * dt
        py += speed * np.sin(heading) * dt
    return states


@dataclass
class TrackingInstance:
    """Batch trajectory estimation of one target observed by N robots over T timesteps (1-based)."""
    num_robots: int
    horizon: int
    dt: float
    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    prior_cov: np.ndarray
    prior_mean: np.ndarray
    observation_sets: List[List[int]]
    measurements: List[np.ndarray]
    ground_truth: np.ndarray
    robot_positions: np.ndarray
    sensing_range: float
    _solution: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return STATE_DIM * self.horizon

    def blocks(self, robot: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Stacked (H_i, W_i, z_i) of robot i, with the shared prior and dynamics covariances scaled by N
        so that ‖z_i − H_i x‖²_{W_i⁻¹} is exactly the robot's local cost.

        Args:
            robot (int): Robot index.

        Returns:
            Tuple[np.ndarray, np.ndarray, np.ndarray]: H_i = [P_i; G_i ⊗ C], W_i, z_i.
        """
        N, T = self.num_robots, self.horizon
        steps = self.observation_sets[robot]
        P = transition_matrix(T, self.A)
        C_tilde = np.kron(selection_matrix(steps, T), self.C)
        H = np.vstack([P, C_tilde])

        covariances = [N * self.prior_cov] + [N * self.Q] * (T - 1) + [self.R] * len(steps)
        W = block_diag(*covariances)
        z = np.concatenate([self.prior_mean, np.zeros(STATE_DIM * (T - 1)),
                            self.measurements[robot].reshape(-1)])
        return H, W, z

    def local_objectives(self) -> List[QuadraticObjective]:
        objectives = []
        for i in range(self.num_robots):
            H, W, z = self.blocks(i)
            objectives.append(least_squares_objective(H, W, z))
        return objectives

    def global_cost(self, x: np.ndarray) -> float:
        """Prior, dynamics and measurement terms of the full problem, unscaled."""
        states = np.asarray(x, dtype=float).reshape(self.horizon, STATE_DIM)
        r = states[0] - self.prior_mean
        cost = float(r @ np.linalg.solve(self.prior_cov, r))
        for t in range(self.horizon - 1):
            r = states[t + 1] - self.A @ states[t]
            cost += float(r @ np.linalg.solve(self.Q, r))
        for i in range(self.num_robots):
            for row, t in enumerate(self.observation_sets[i]):
                r = self.measurements[i][row] - self.C @ states[t - 1]
                cost += float(r @ np.linalg.solve(self.R, r))
        return cost

    def solution(self) -> np.ndarray:
        if self._solution is None:
            self._solution = centralized_lls_solve(self)
        return self._solution

    def window_decomposition(self, graph: CommGraph) -> ReducedDecomposition:
        """
        Time-window split for a chain graph: node i owns a contiguous block of timesteps plus the
        first step of the next block, and holds every prior, dynamics and measurement term whose
        earliest timestep lies in its block. Neighbors share one overlapping state.
        """
        N, T = graph.num_nodes, self.horizon
        if T < N:
            raise InstanceError(f"Cannot split {T} timesteps into {N} windows")
        for i in range(N - 1):
            if not graph.has_edge(i, i + 1):
                raise InstanceError("Time-window split needs a chain graph over nodes 0..N-1")

        bounds = np.linspace(0, T, N + 1).round().astype(int)
        blocks = [list(range(bounds[i] + 1, bounds[i + 1] + 1)) for i in range(N)]

        measured = {}
        for robot in range(self.num_robots):
            for row, t in enumerate(self.observation_sets[robot]):
                measured.setdefault(t, []).append(self.measurements[robot][row])

        objectives, selectors = [], []
        for i, block in enumerate(blocks):
            window = block + ([block[-1] + 1] if i < N - 1 else [])
            local = {t: k for k, t in enumerate(window)}
            d = STATE_DIM * len(window)

            rows, covs, data = [], [], []
            if block[0] == 1:
                row = np.zeros((STATE_DIM, d))
                row[:, :STATE_DIM] = np.eye(STATE_DIM)
                rows.append(row)
                covs.append(self.prior_cov)
                data.append(self.prior_mean)
            for t in block:
                if t + 1 <= T:
                    row = np.zeros((STATE_DIM, d))
                    row[:, local[t] * STATE_DIM:(local[t] + 1) * STATE_DIM] = -self.A
                    row[:, local[t + 1] * STATE_DIM:(local[t + 1] + 1) * STATE_DIM] = np.eye(STATE_DIM)
                    rows.append(row)
                    covs.append(self.Q)
                    data.append(np.zeros(STATE_DIM))
                for y in measured.get(t, []):
                    row = np.zeros((MEAS_DIM, d))
                    row[:, local[t] * STATE_DIM:(local[t] + 1) * STATE_DIM] = self.C
                    rows.append(row)
                    covs.append(self.R)
                    data.append(y)

            objectives.append(least_squares_objective(np.vstack(rows), block_diag(*covs), np.concatenate(data)))
            selectors.append(np.concatenate([np.arange((t - 1) * STATE_DIM, t * STATE_DIM) for t in window]))

        maps = {}
        for i in range(N - 1):
            shared = blocks[i + 1][0]
            for a, b in ((i, i + 1), (i + 1, i)):
                window_len = len(selectors[a]) // STATE_DIM
                first = (selectors[a][0] // STATE_DIM) + 1
                phi = np.zeros((STATE_DIM, STATE_DIM * window_len))
                k = shared - first
                phi[:, k * STATE_DIM:(k + 1) * STATE_DIM] = np.eye(STATE_DIM)
                maps[(a, b)] = phi

        decomposition = ReducedDecomposition(objectives, selectors, maps)
        decomposition.validate(graph)
        return decomposition

    def to_problem(self, name: str = "tracking") -> ProblemInstance:
        return ProblemInstance(
            name=name,
            objectives=self.local_objectives(),
            reference=self.solution(),
            ground_truth=self.ground_truth,
            positions=self.robot_positions,
            document=self.to_document(),
        )

    def to_document(self) -> dict:
        return {
            "kind": "tracking",
            "num_robots": self.num_robots,
            "horizon": self.horizon,
            "dt": self.dt,
            "A": self.A.tolist(),
            "C": self.C.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "prior_cov": self.prior_cov.tolist(),
            "prior_mean": self.prior_mean.tolist(),
            "observation_sets": [list(map(int, s)) for s in self.observation_sets],
            "measurements": [m.tolist() for m in self.measurements],
            "ground_truth": self.ground_truth.tolist(),
            "robot_positions": self.robot_positions.tolist(),
            "sensing_range": self.sensing_range,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "TrackingInstance":
        return cls(
            num_robots=doc["num_robots"],
            horizon=doc["horizon"],
            dt=doc["dt"],
            A=np.array(doc["A"], dtype=float),
            C=np.array(doc["C"], dtype=float),
            Q=np.array(doc["Q"], dtype=float),
            R=np.array(doc["R"], dtype=float),
            prior_cov=np.array(doc["prior_cov"], dtype=float),
            prior_mean=np.array(doc["prior_mean"], dtype=float),
            observation_sets=[list(s) for s in doc["observation_sets"]],
            measurements=[np.array(m, dtype=float).reshape(-1, MEAS_DIM) for m in doc["measurements"]],
            ground_truth=np.array(doc["ground_truth"], dtype=float),
            robot_positions=np.array(doc["robot_positions"], dtype=float),
            sensing_range=doc["sensing_range"],
        )


def build_tracking_instance(num_robots: int,
                            horizon: int,
                            sensing_range: float = 4.0,
                            process_var: float = 0.05,
                            meas_var: float = 0.1,
                            prior_var: float = 1.0,
                            dt: float = 1.0,
                            seed: int = 0,
                            truth: str = "unicycle",
                            noise_scale: float = 1.0,
                            speed: float = 1.0,
                            max_turn_rate: float = 1.5,
                            robot_positions: Optional[np.ndarray] = None) -> TrackingInstance:
    """
    Simulate a target, place robots along its route and record their measurements.

    Args:
        num_robots (int): Number of robots N.
        horizon (int): Number of timesteps T; the decision vector has length 4T.
        sensing_range (float): A robot observes the target when it is at most this far away.
        process_var (float): Q = process_var·I.
        meas_var (float): R = meas_var·I.
        prior_var (float): Prior covariance scale on the first state.
        dt (float): Sampling interval of the linear model.
        seed (int): Seed for waypoints, robot placement and noise.
        truth (str): "unicycle" (waypoint-steered) or "constant_velocity".
        noise_scale (float): Multiplier on every noise draw; 0 gives exact data.
        speed (float): Target speed.
        max_turn_rate (float): Unicycle turn-rate limit in rad/s.
        robot_positions (Optional[np.ndarray]): Explicit (N, 2) robot positions. By default robots sit at
            evenly spaced points of the route, jittered within the sensing range.

    Returns:
        TrackingInstance: The assembled instance.
    """
    if num_robots < 1:
        raise InstanceError(f"Need at least one robot, got {num_robots}")
    if horizon < 2:
        raise InstanceError(f"Need at least two timesteps, got {horizon}")
    if dt <= 0:
        raise InstanceError(f"Sampling interval must be positive, got {dt}")

    rng = np.random.default_rng(seed)
    A = dynamics_matrix(dt)
    Q = process_var * np.eye(STATE_DIM)
    R = meas_var * np.eye(MEAS_DIM)
    prior_cov = prior_var * np.eye(STATE_DIM)
    std = np.sqrt(meas_var)

    heading = rng.uniform(-np.pi, np.pi)
    if truth == "unicycle":
        start = np.array([0.0, 0.0, heading])
        reach = speed * dt * horizon
        waypoints = rng.uniform(-reach, reach, size=(3, 2))
        path = unicycle_path(start, waypoints, horizon, dt, speed, max_turn_rate,
                              capture_radius=speed * dt)
    elif truth == "constant_velocity":
        path = np.zeros((horizon, STATE_DIM))
        path[0] = [0.0, 0.0, speed * np.cos(heading), speed * np.sin(heading)]
        for t in range(1, horizon):
            path[t] = A @ path[t - 1]
    else:
        raise InstanceError(f"Unknown ground-truth model '{truth}'")

    if robot_positions is None:
        anchors = np.linspace(0, horizon - 1, num_robots).round().astype(int)
        offsets = rng.uniform(-0.5, 0.5, size=(num_robots, 2)) * sensing_range / np.sqrt(2.0)
        robot_positions = path[anchors, :2] + offsets
    robot_positions = np.asarray(robot_positions, dtype=float)

    observation_sets, measurements = [], []
    for i in range(num_robots):
        distances = np.linalg.norm(path[:, :2] - robot_positions[i], axis=1)
        steps = [t + 1 for t in range(horizon) if distances[t] <= sensing_range]
        if not steps:
            logger.warning(f"Robot {i} never observes the target; its cost holds only shared terms")
        noise = noise_scale * std * rng.standard_normal((len(steps), MEAS_DIM))
        y = np.array([OBSERVATION_MATRIX @ path[t - 1] for t in steps]).reshape(-1, MEAS_DIM) + noise
        observation_sets.append(steps)
        measurements.append(y)

    prior_mean = path[0] + noise_scale * np.sqrt(prior_var) * rng.standard_normal(STATE_DIM)

    instance = TrackingInstance(
        num_robots=num_robots,
        horizon=horizon,
        dt=dt,
        A=A,
        C=OBSERVATION_MATRIX.copy(),
        Q=Q,
        R=R,
        prior_cov=prior_cov,
        prior_mean=prior_mean,
        observation_sets=observation_sets,
        measurements=measurements,
        ground_truth=path.reshape(-1),
        robot_positions=robot_positions,
        sensing_range=sensing_range,
    )
    logger.info(f"Built tracking instance: N={num_robots}, T={horizon}, "
                f"observations per robot {[len(s) for s in observation_sets]}")
    return instance


def centralized_lls_solve(instance: TrackingInstance) -> np.ndarray:
    """
    Solve the stacked normal equations (HᵀW⁻¹H)x = HᵀW⁻¹z over all robots.

    Returns:
        np.ndarray: The centralized estimate x* of length 4T.
    """
    normal = np.zeros((instance.dim, instance.dim))
    rhs = np.zeros(instance.dim)
    for i in range(instance.num_robots):
        H, W, z = instance.blocks(i)
        normal += H.T @ np.linalg.solve(W, H)
        rhs += H.T @ np.linalg.solve(W, z)
    try:
        factor = cho_factor(normal)
    except LinAlgError as e:
        raise InstanceError(f"Normal equations are singular: {e}")
    x = cho_solve(factor, rhs)

    residual = float(np.max(np.abs(normal @ x - rhs)))
    if residual > 1e-9 * (1.0 + float(np.max(np.abs(rhs)))):
        logger.warning(f"Normal-equation residual {residual:.3e} above tolerance")
    return x
