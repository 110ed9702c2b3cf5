import numpy as np
import pytest
from scipy.linalg import block_diag

from src.core import ConstraintSet, RoundExecutor, StopRule, run_rounds
from src.errors import ParameterError, StateError
from src.graph import chain_graph, metropolis_weights
from src.newton_methods import (NEXT, NetworkNewton, NnkState, linear_surrogate_argmin, next_step_size,
                                nnk_apply, nnk_inner_step, nnk_outer_step, quadratic_surrogate_argmin)
from src.objectives import QuadraticObjective
from src.util_classes import TerminationReason
from helpers import scalar_quadratic

TWO_NODE_PENALTY = {0: {0: 0.5, 1: -0.5}, 1: {0: -0.5, 1: 0.5}}


def test_outer_step_builds_the_local_block():
    state = NnkState(x=np.array([1.0]), alpha=1.0, epsilon=1.0, K=0)
    new, ops = nnk_outer_step(state, {0: np.array([1.0]), 1: np.array([1.0])}, TWO_NODE_PENALTY[0], 0,
                              scalar_quadratic(0.0))
    np.testing.assert_allclose(new.D, [[2.0]])
    np.testing.assert_allclose(new.g, [1.0])
    np.testing.assert_allclose(new.d, [-0.5])
    assert ops > 0


def test_apply_moves_along_the_direction():
    state = NnkState(x=np.array([1.0, 2.0]), alpha=1.0, epsilon=0.5, K=0, d=np.array([2.0, -2.0]))
    np.testing.assert_allclose(nnk_apply(state).x, [2.0, 1.0])
    with pytest.raises(StateError):
        nnk_apply(NnkState(x=np.zeros(1), alpha=1.0, epsilon=1.0, K=0))


def test_inner_step_checks_its_inputs():
    fresh = NnkState(x=np.zeros(1), alpha=1.0, epsilon=1.0, K=1)
    with pytest.raises(StateError):
        nnk_inner_step(fresh, {0: np.zeros(1)}, TWO_NODE_PENALTY[0], 0, 0)


def _nn_direction(objectives, xs, K, alpha=1.0):
    states = [NnkState(x=xs[i], alpha=alpha, epsilon=1.0, K=K) for i in range(2)]
    states = [nnk_outer_step(s, {0: xs[0], 1: xs[1]}, TWO_NODE_PENALTY[i], i, objectives[i])[0]
              for i, s in enumerate(states)]
    for p in range(K):
        directions = {j: states[j].d for j in range(2)}
        states = [nnk_inner_step(s, directions, TWO_NODE_PENALTY[i], i, p)[0] for i, s in enumerate(states)]
    return np.concatenate([s.d for s in states])


def test_truncated_direction_improves_with_k():
    objectives = [QuadraticObjective(2.0 * np.eye(2), np.array([1.0, -1.0])),
                  QuadraticObjective(2.0 * np.eye(2), np.array([0.0, 1.0]))]
    xs = [np.array([1.0, 0.0]), np.array([0.0, 2.0])]
    penalty = np.kron(np.array([[0.5, -0.5], [-0.5, 0.5]]), np.eye(2))
    x = np.concatenate(xs)
    hessian = np.kron(np.eye(2), 2.0 * np.eye(2)) + penalty
    gradient = np.concatenate([obj._gradient(xi) for obj, xi in zip(objectives, xs)]) + penalty @ x
    exact = -np.linalg.solve(hessian, gradient)

    errors = [np.linalg.norm(_nn_direction(objectives, xs, K) - exact) for K in range(9)]
    assert all(later <= earlier + 1e-15 for earlier, later in zip(errors, errors[1:]))
    assert errors[-1] < 1e-3 * errors[0]


def test_network_newton_reaches_the_penalized_minimizer(two_node_scalar):
    objectives, graph, reference = two_node_scalar
    alpha = 1.0
    trace = run_rounds(NetworkNewton(alpha=alpha, K=2), objectives, graph, reference,
                       stop=StopRule(tol_mse=1e-30, cap=100))
    W_bar = np.eye(2) - metropolis_weights(graph).W
    expected = np.linalg.solve(alpha * np.eye(2) + W_bar, -alpha * np.array([0.0, -2.0]))
    np.testing.assert_allclose(np.concatenate(trace.estimates), expected, atol=1e-8)


def test_network_newton_parameters():
    with pytest.raises(ParameterError):
        NetworkNewton(K=-1)
    with pytest.raises(ParameterError):
        NetworkNewton(alpha=0.0)
    assert NetworkNewton(K=3).rounds_per_iteration == 4


def test_quadratic_surrogate_is_exact_for_quadratics():
    objective = QuadraticObjective(np.diag([2.0, 4.0]), np.array([-2.0, 4.0]))
    x = quadratic_surrogate_argmin(np.array([5.0, 5.0]), np.zeros(2), objective, tau=0.0)
    np.testing.assert_allclose(x, [1.0, -1.0], atol=1e-10)


def test_quadratic_surrogate_respects_the_box():
    objective = QuadraticObjective(np.diag([2.0, 4.0]), np.array([-2.0, 4.0]))
    box = ConstraintSet.box([0.0, 0.0], [0.5, 0.5])
    x = quadratic_surrogate_argmin(np.array([0.2, 0.2]), np.zeros(2), objective, constraints=box, tau=0.0)
    np.testing.assert_allclose(x, [0.5, 0.0], atol=1e-9)


def test_stationary_anchor_is_a_fixed_point():
    objective = QuadraticObjective(np.diag([1.0, 3.0]), np.array([0.5, -0.5]))
    anchor = np.array([0.3, -0.7])
    pi = -objective._gradient(anchor)
    np.testing.assert_allclose(quadratic_surrogate_argmin(anchor, pi, objective), anchor, atol=1e-12)
    np.testing.assert_allclose(linear_surrogate_argmin(anchor, pi, objective), anchor, atol=1e-12)


def test_linear_surrogate_is_a_projected_gradient_step():
    objective = scalar_quadratic(0.0)
    x = linear_surrogate_argmin(np.array([2.0]), np.array([1.0]), objective, tau=2.0)
    np.testing.assert_allclose(x, [2.0 - 3.0 / 2.0])
    with pytest.raises(ParameterError):
        linear_surrogate_argmin(np.array([2.0]), np.zeros(1), objective, tau=0.0)


def test_indefinite_surrogate():
    objective = QuadraticObjective(np.diag([-1.0, 1.0]), np.zeros(2))
    with pytest.raises(ParameterError):
        quadratic_surrogate_argmin(np.ones(2), np.zeros(2), objective, tau=0.0)
    x = quadratic_surrogate_argmin(np.ones(2), np.zeros(2), objective, tau=0.5, convexify=True)
    assert np.all(np.isfinite(x))


def test_next_step_size():
    assert next_step_size(0.5, 0.0, 10) == 0.5
    assert next_step_size(0.5, 0.1, 10) == pytest.approx(0.25)


def test_next_keeps_its_tracking_identities(make_quadratics, chain4):
    objectives, reference = make_quadratics(4, 2, seed=11)
    seen = []

    def check(iteration, envelopes):
        states = [env.state for env in envelopes]
        np.testing.assert_allclose(sum(s.y for s in states), sum(s.grad for s in states), atol=1e-9)
        for objective, s in zip(objectives, states):
            np.testing.assert_allclose(s.grad, objective._gradient(s.x), atol=1e-12)
            np.testing.assert_allclose(s.pi, 4 * s.y - s.grad, atol=1e-12)
        seen.append(iteration)

    RoundExecutor(NEXT(alpha0=0.02, mu=0.0), objectives, chain4).run(reference, stop=StopRule(tol_mse=1e-30, cap=20),
                                                                     callback=check)
    assert len(seen) == 20


def test_next_two_nodes_converges(two_node_scalar):
    objectives, graph, reference = two_node_scalar
    trace = run_rounds(NEXT(alpha0=0.1, mu=0.0, tau=None, lazy=False), objectives, graph, reference,
                       stop=StopRule(tol_mse=1e-10, cap=3000))
    assert trace.termination == TerminationReason.CONVERGED


def test_next_linear_surrogate_needs_no_hessian():
    assert NEXT(surrogate="linear").requires == frozenset({"gradient"})
    with pytest.raises(ParameterError):
        NEXT(surrogate="cubic")


@pytest.mark.slow
def test_next_on_a_chain(make_quadratics):
    objectives, reference = make_quadratics(5, 3, seed=12)
    trace = run_rounds(NEXT(alpha0=0.02, mu=0.0, tau=None, lazy=False), objectives, chain_graph(5), reference,
                       stop=StopRule(tol_mse=1e-8, cap=10000))
    assert trace.termination == TerminationReason.CONVERGED


def _penalized_minimizer(objectives, graph, alpha):
    dim = objectives[0].dim
    hessian = alpha * block_diag(*[obj.H for obj in objectives])
    hessian += np.kron(metropolis_weights(graph).laplacian_like(), np.eye(dim))
    linear = -alpha * np.concatenate([obj.c for obj in objectives])
    return np.linalg.solve(hessian, linear).reshape(len(objectives), dim)


@pytest.mark.slow
def test_network_newton_on_tracking_settles_at_its_penalized_point(tracking_chain):
    problem, graph = tracking_chain
    trace = run_rounds(NetworkNewton(alpha=1e-2, K=1), problem.objectives, graph, problem.reference,
                       stop=StopRule(tol_mse=1e-30, cap=1000))
    target = _penalized_minimizer(problem.objectives, graph, 1e-2)
    errors = [float(np.sum((x - t) ** 2)) for x, t in zip(trace.estimates, target)]
    assert max(errors) < 1e-6

    # the penalized point moves toward x* as α shrinks
    gaps = [np.mean(np.sum((_penalized_minimizer(problem.objectives, graph, a) - problem.reference) ** 2, axis=1))
            for a in (1e-1, 1e-2)]
    assert gaps[1] < gaps[0]


@pytest.mark.slow
def test_next_defaults_converge_on_tracking(tracking_chain):
    problem, graph = tracking_chain
    trace = run_rounds(NEXT(), problem.objectives, graph, problem.reference, stop=StopRule(tol_mse=1e-6, cap=10_000))
    assert trace.termination == TerminationReason.CONVERGED
    assert trace.iterations < 2000
