import numpy as np
import pytest

from src.admm_methods import CADMM
from src.core import StopRule, run_rounds
from src.delivery_problem import build_delivery_instance
from src.errors import InstanceError
from src.gradient_methods import DDA, EXTRA
from src.graph import chain_graph, complete_graph
from src.mapping_problem import RangeObjective, build_mapping_instance, centralized_mapping_solve
from src.newton_methods import NEXT
from src.problems import build_instance, read_instance, to_problem, write_instance
from src.tracking_problem import build_tracking_instance, dynamics_matrix, selection_matrix, transition_matrix
from src.util_classes import TerminationReason


def _finite_difference_gradient(objective, x, h=1e-6):
    grad = np.zeros_like(x)
    for k in range(x.shape[0]):
        step = np.zeros_like(x)
        step[k] = h
        grad[k] = (objective._value(x + step) - objective._value(x - step)) / (2 * h)
    return grad


# tracking
def test_dynamics_matrix():
    expected = np.array([[1.0, 0.0, 0.1, 0.0],
                         [0.0, 1.0, 0.0, 0.1],
                         [0.0, 0.0, 1.0, 0.0],
                         [0.0, 0.0, 0.0, 1.0]])
    np.testing.assert_allclose(dynamics_matrix(0.1), expected)


def test_selection_and_transition_blocks():
    G = selection_matrix([2], 3)
    np.testing.assert_array_equal(G, [[0.0, 1.0, 0.0]])
    C = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    C_tilde = np.kron(G, C)
    assert C_tilde.shape == (2, 12)
    np.testing.assert_array_equal(C_tilde[:, 4:8], C)
    assert not C_tilde[:, :4].any() and not C_tilde[:, 8:].any()

    A = dynamics_matrix(0.1)
    P = transition_matrix(3, A)
    np.testing.assert_array_equal(P[4:8, 0:4], -A)
    np.testing.assert_array_equal(P[8:12, 8:12], np.eye(4))


def test_tracking_noise_model():
    instance = build_tracking_instance(3, 5, seed=0)
    np.testing.assert_allclose(instance.Q, 0.05 * np.eye(4))
    np.testing.assert_allclose(instance.R, 0.1 * np.eye(2))
    assert instance.dim == 20


def test_exact_data_recovers_the_truth():
    instance = build_tracking_instance(3, 6, truth="constant_velocity", noise_scale=0.0, seed=0)
    np.testing.assert_allclose(instance.solution(), instance.ground_truth, atol=1e-8)


def test_local_costs_sum_to_the_global_cost():
    instance = build_tracking_instance(4, 6, seed=3)
    objectives = instance.local_objectives()
    rng = np.random.default_rng(0)
    for _ in range(3):
        x = rng.standard_normal(instance.dim)
        total = sum(obj._value(x) for obj in objectives)
        assert total == pytest.approx(instance.global_cost(x), rel=1e-10)


def test_tracking_solution_is_stationary():
    instance = build_tracking_instance(3, 8, seed=4)
    objectives = instance.local_objectives()
    gradient = sum(obj._gradient(instance.solution()) for obj in objectives)
    assert np.max(np.abs(gradient)) < 1e-6


def test_quadratic_gradient_matches_finite_differences():
    objective = build_tracking_instance(2, 4, seed=5).local_objectives()[0]
    x = np.random.default_rng(1).standard_normal(objective.dim)
    np.testing.assert_allclose(objective._gradient(x), _finite_difference_gradient(objective, x), rtol=1e-5, atol=1e-5)
    H = objective.hessian(x)
    np.testing.assert_allclose(H, H.T)


def test_window_decomposition_covers_the_global_cost():
    instance = build_tracking_instance(3, 9, seed=6)
    graph = chain_graph(3)
    decomposition = instance.window_decomposition(graph)
    x = np.random.default_rng(2).standard_normal(instance.dim)
    total = sum(obj._value(decomposition.restrict(i, x)) for i, obj in enumerate(decomposition.objectives))
    assert total == pytest.approx(instance.global_cost(x), rel=1e-10)


def test_window_decomposition_needs_enough_steps():
    instance = build_tracking_instance(2, 2, seed=0)
    with pytest.raises(InstanceError):
        instance.window_decomposition(chain_graph(3))


def test_tracking_rejects_bad_sizes():
    with pytest.raises(InstanceError):
        build_tracking_instance(0, 5)
    with pytest.raises(InstanceError):
        build_tracking_instance(2, 1)
    with pytest.raises(InstanceError):
        build_tracking_instance(2, 5, truth="teleport")


# mapping
def _range_objective():
    rng = np.random.default_rng(7)
    positions = rng.uniform(-2.0, 2.0, size=(6, 2))
    return RangeObjective(2, np.array([0, 0, 0, 0, 0, 0]), positions, rng.uniform(0.5, 2.0, size=6), np.ones(6))


def test_range_gradient_matches_finite_differences():
    objective = _range_objective()
    x = np.array([0.3, -0.4, 1.0, 1.0])
    np.testing.assert_allclose(objective._gradient(x), _finite_difference_gradient(objective, x), rtol=1e-5, atol=1e-7)
    H = objective.hessian(x)
    np.testing.assert_allclose(H, H.T, atol=1e-12)


def test_unmeasured_landmark_has_zero_gradient():
    objective = _range_objective()
    gradient = objective._gradient(np.array([0.3, -0.4, 1.0, 1.0]))
    np.testing.assert_array_equal(gradient[2:], [0.0, 0.0])


def test_exact_ranges_recover_the_landmarks():
    instance = build_mapping_instance(3, 2, noise_std=0.0, seed=0)
    np.testing.assert_allclose(instance.solution(), instance.landmarks.reshape(-1), atol=1e-6)


def test_mapping_oracle_is_stationary():
    instance = build_mapping_instance(3, 3, seed=1)
    x = instance.solution()
    gradient = sum(obj._gradient(x) for obj in instance.local_objectives())
    assert np.max(np.abs(gradient)) <= 1e-8


def test_more_starts_never_hurt():
    instance = build_mapping_instance(2, 3, seed=2)
    few = centralized_mapping_solve(instance, starts=8)
    many = centralized_mapping_solve(instance, starts=16)
    assert instance.global_cost(many) <= instance.global_cost(few) + 1e-12


def test_mapping_oracle_needs_eight_starts():
    instance = build_mapping_instance(2, 1, seed=0)
    with pytest.raises(ValueError):
        centralized_mapping_solve(instance, starts=4)


# delivery
def test_default_delivery_solution_is_feasible():
    instance = build_delivery_instance(seed=0)
    report = instance.violation_report(instance.solution())
    assert max(report.values()) < 1e-8


def test_symmetric_meeting_happens_at_the_midpoint():
    instance = build_delivery_instance(num_aerial=1, num_ground=1, horizon=4, meetings=[(0, 0, 2)], zone=None,
                                       max_speed=None, max_control=None,
                                       aerial_starts=[[-1.0, 0.0, 1.0]], aerial_ends=[[1.0, 0.0, 1.0]],
                                       ground_starts=[[0.0, -0.5]], ground_ends=[[0.0, 0.5]])
    Z = instance.solution()
    np.testing.assert_allclose(Z[instance.layouts[1].position(2)], [0.0, 0.0], atol=1e-8)
    np.testing.assert_allclose(Z[instance.layouts[0].position(2)], [0.0, 0.0, 0.0], atol=1e-8)


def test_delivery_schedule_is_checked():
    with pytest.raises(InstanceError):
        build_delivery_instance(num_aerial=1, num_ground=1, horizon=4, meetings=[(0, 0, 4)])
    with pytest.raises(InstanceError):
        build_delivery_instance(num_aerial=1, num_ground=1, horizon=4, meetings=[(0, 3, 2)])


def _largest_violation(instance, estimates):
    return max(max(instance.violation_report(x).values()) for x in estimates)


@pytest.mark.slow
def test_cadmm_solves_the_default_delivery_instance(delivery_complete):
    problem, graph = delivery_complete
    instance = build_delivery_instance()
    trace = run_rounds(CADMM(rho=0.1), problem.objectives, graph, problem.reference,
                       stop=StopRule(tol_mse=1e-6, cap=300))
    assert trace.termination == TerminationReason.CONVERGED

    trace = run_rounds(CADMM(rho=0.1), problem.objectives, graph, problem.reference,
                       stop=StopRule(tol_mse=1e-13, cap=800))
    assert trace.converged
    assert _largest_violation(instance, trace.estimates) < 1e-6


@pytest.mark.slow
def test_next_keeps_delivery_estimates_feasible(delivery_complete):
    problem, graph = delivery_complete
    algorithm = NEXT(alpha0=0.5, mu=0.01, tau=1.0, lazy=False, feasible_set=problem.feasible_set)
    trace = run_rounds(algorithm, problem.objectives, graph, problem.reference, stop=StopRule(tol_mse=1e-6, cap=600))
    assert trace.termination == TerminationReason.CONVERGED
    assert _largest_violation(build_delivery_instance(), trace.estimates) < 1e-6


@pytest.mark.slow
def test_dda_on_delivery_is_feasible_but_slow(delivery_complete):
    problem, graph = delivery_complete
    algorithm = DDA(alpha0=1.0, feasible_set=problem.feasible_set)
    trace = run_rounds(algorithm, problem.objectives, graph, problem.reference, stop=StopRule(tol_mse=1e-6, cap=300))
    assert trace.termination == TerminationReason.ITERATION_CAP
    assert trace.final_mse < 0.5 * trace.records[0].mse
    assert _largest_violation(build_delivery_instance(), trace.estimates) < 1e-6


# mapping runs
@pytest.fixture(scope="module")
def mapping_problem():
    instance = build_instance("mapping", {"num_robots": 3, "num_landmarks": 2, "horizon": 8}, seed=2)
    return instance, to_problem(instance)


@pytest.mark.slow
@pytest.mark.parametrize("algorithm", [EXTRA(alpha=0.02), CADMM(rho=1.0)], ids=["extra", "cadmm"])
def test_mapping_runs_settle_at_the_oracle_solution(algorithm, mapping_problem):
    instance, problem = mapping_problem
    np.testing.assert_allclose(problem.reference, centralized_mapping_solve(instance), atol=1e-8)

    rng = np.random.default_rng(0)
    x0 = [problem.reference + 0.05 * rng.standard_normal(problem.dim) for _ in range(problem.num_nodes)]
    trace = run_rounds(algorithm, problem.objectives, complete_graph(problem.num_nodes), problem.reference,
                       x0=x0, stop=StopRule(tol_mse=1e-6, cap=2000))
    assert trace.termination == TerminationReason.CONVERGED


# registry
def test_unknown_builder_parameter():
    with pytest.raises(InstanceError):
        build_instance("tracking", {"num_robots": 2, "horizon": 4, "wingspan": 3})
    with pytest.raises(InstanceError):
        build_instance("weather", {})


def test_instance_file_round_trip_gives_identical_runs(tmp_path):
    instance = build_instance("tracking", {"num_robots": 3, "horizon": 4}, seed=8)
    path = tmp_path / "instance.json"
    write_instance(instance, str(path))
    restored = read_instance(str(path))

    stop = StopRule(tol_mse=1e-30, cap=5)
    traces = []
    for inst in (instance, restored):
        problem = to_problem(inst)
        traces.append(run_rounds(CADMM(rho=1.0), problem.objectives, complete_graph(3), problem.reference, stop=stop))
    assert [r.mse for r in traces[0].records] == [r.mse for r in traces[1].records]
