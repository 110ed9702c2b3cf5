from typing import Callable, List, Tuple

import numpy as np
import pytest

from src.core import ProblemInstance
from src.graph import CommGraph, chain_graph, complete_graph
from src.objectives import QuadraticObjective
from src.problems import build_instance, to_problem
from helpers import scalar_quadratic


@pytest.fixture
def two_node_scalar() -> Tuple[List[QuadraticObjective], CommGraph, np.ndarray]:
    """f_i = ½(x − a_i)² with a = (0, 2) on the two-node graph; optimum x* = 1."""
    return [scalar_quadratic(0.0), scalar_quadratic(2.0)], chain_graph(2), np.array([1.0])


@pytest.fixture
def make_quadratics() -> Callable[[int, int, int], Tuple[List[QuadraticObjective], np.ndarray]]:
    """Random diagonal quadratics with curvature in [0.5, 1.5] and their joint minimizer."""

    def make(num_nodes: int, dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        objectives = []
        for _ in range(num_nodes):
            H = np.diag(rng.uniform(0.5, 1.5, size=dim))
            objectives.append(QuadraticObjective(H, rng.uniform(-1.0, 1.0, size=dim)))
        H_sum = sum(obj.H for obj in objectives)
        c_sum = sum(obj.c for obj in objectives)
        return objectives, np.linalg.solve(H_sum, -c_sum)

    return make


@pytest.fixture
def chain4() -> CommGraph:
    return chain_graph(4)


@pytest.fixture(scope="session")
def tracking_chain() -> Tuple[ProblemInstance, CommGraph]:
    """Tracking benchmark with four robots over sixteen timesteps, robots on a chain."""
    problem = to_problem(build_instance("tracking", {"num_robots": 4, "horizon": 16}))
    return problem, chain_graph(4)


@pytest.fixture(scope="session")
def delivery_complete() -> Tuple[ProblemInstance, CommGraph]:
    """Default delivery instance, three aerial and two ground robots, all in range of each other."""
    problem = to_problem(build_instance("delivery", {}))
    return problem, complete_graph(problem.num_nodes)
