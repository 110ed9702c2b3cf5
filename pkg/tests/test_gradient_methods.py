import numpy as np
import pytest

from src.core import ConstraintSet, RoundExecutor, StopRule, run_rounds
from src.errors import ParameterError, StateError
from src.gradient_methods import (DDA, DGD, EXTRA, Canonical, DgdState, DIGing, ExtraState, dda_prox,
                                  dgd_step, extra_step, step_size)
from src.graph import metropolis_weights
from src.util_classes import TerminationReason
from helpers import scalar_quadratic


def test_step_size_schedules():
    assert step_size(0.5, 0) == 0.5
    assert step_size(0.5, 4) == pytest.approx(0.25)
    assert step_size(0.5, 100, "constant") == 0.5
    with pytest.raises(ParameterError):
        step_size(0.5, 1, "harmonic")


def test_dgd_step_at_consensus():
    objective = scalar_quadratic(1.0)
    state = DgdState(x=np.array([1.0]), alpha0=0.3)
    new = dgd_step(state, {0: np.array([1.0]), 1: np.array([1.0])}, {0: 0.5, 1: 0.5}, objective)
    np.testing.assert_allclose(new.x, [1.0])
    assert new.k == 1


def test_dgd_step_mixes_then_descends():
    objective = scalar_quadratic(0.0)
    state = DgdState(x=np.array([2.0]), alpha0=0.5, schedule="constant")
    new = dgd_step(state, {0: np.array([2.0]), 1: np.array([0.0])}, {0: 0.5, 1: 0.5}, objective)
    np.testing.assert_allclose(new.x, [1.0 - 0.5 * 2.0])


def _dense_extra(H, c, W, alpha, x0, iterations):
    """EXTRA on stacked scalar quadratics f_i(x) = ½h_i x² + c_i x."""
    grad = lambda x: H * x + c
    W_tilde = 0.5 * (np.eye(len(x0)) + W)
    history = [x0, W @ x0 - alpha * grad(x0)]
    for _ in range(iterations - 1):
        x_prev, x = history[-2], history[-1]
        history.append(x + W @ x - W_tilde @ x_prev - alpha * (grad(x) - grad(x_prev)))
    return history


def test_extra_matches_dense_recursion(make_quadratics, chain4):
    objectives, reference = make_quadratics(4, 1, seed=4)
    W = metropolis_weights(chain4).W
    H = np.array([obj.H[0, 0] for obj in objectives])
    c = np.array([obj.c[0] for obj in objectives])
    x0 = np.array([0.3, -0.2, 0.5, 1.0])
    dense = _dense_extra(H, c, W, 0.1, x0, 25)

    trace = run_rounds(EXTRA(alpha=0.1), objectives, chain4, reference, stop=StopRule(tol_mse=1e-30, cap=25),
                       x0=[np.array([v]) for v in x0])
    np.testing.assert_allclose(np.concatenate(trace.estimates), dense[25], atol=1e-12)


def test_canonical_default_is_extra(make_quadratics, chain4):
    objectives, reference = make_quadratics(4, 2, seed=6)
    stop = StopRule(tol_mse=1e-30, cap=40)
    extra = run_rounds(EXTRA(alpha=0.1), objectives, chain4, reference, stop=stop)
    objectives, reference = make_quadratics(4, 2, seed=6)
    canonical = run_rounds(Canonical(alpha=0.1), objectives, chain4, reference, stop=stop)
    for a, b in zip(extra.estimates, canonical.estimates):
        np.testing.assert_allclose(a, b, atol=1e-10)
    np.testing.assert_allclose([r.mse for r in extra.records], [r.mse for r in canonical.records], rtol=1e-8)


def test_canonical_without_mixing_is_local_gradient_descent(make_quadratics, chain4):
    objectives, reference = make_quadratics(4, 2, seed=7)
    x0 = np.array([1.0, -1.0])
    trace = run_rounds(Canonical(alpha=0.2, zeta0=0.0, zeta1=0.0, zeta2=0.0, zeta3=0.0), objectives, chain4,
                       reference, stop=StopRule(tol_mse=1e-30, cap=3), x0=x0)
    for objective, estimate in zip(objectives, trace.estimates):
        x = x0.copy()
        for _ in range(3):
            x = x - 0.2 * (objective.H @ x + objective.c)
        np.testing.assert_allclose(estimate, x, atol=1e-12)


def test_canonical_rejects_non_positive_step(two_node_scalar):
    objectives, graph, reference = two_node_scalar
    with pytest.raises(ParameterError):
        run_rounds(Canonical(alpha=0.0), objectives, graph, reference)


@pytest.mark.parametrize("lazy", [True, False])
def test_diging_tracks_the_average_gradient(lazy, make_quadratics, chain4):
    objectives, reference = make_quadratics(4, 2, seed=8)
    checked = []

    def check(iteration, envelopes):
        y_sum = sum(env.state.y for env in envelopes)
        grad_sum = sum(obj._gradient(env.state.x) for obj, env in zip(objectives, envelopes))
        np.testing.assert_allclose(y_sum, grad_sum, atol=1e-9)
        checked.append(iteration)

    executor = RoundExecutor(DIGing(alpha=0.05, lazy=lazy), objectives, chain4)
    executor.run(reference, stop=StopRule(tol_mse=1e-30, cap=30), callback=check)
    assert checked == list(range(1, 31))


def test_diging_two_nodes_converges(two_node_scalar):
    objectives, graph, reference = two_node_scalar
    trace = run_rounds(DIGing(alpha=0.2), objectives, graph, reference, stop=StopRule(tol_mse=1e-10, cap=500))
    assert trace.termination == TerminationReason.CONVERGED


def test_dda_prox():
    z = np.array([1.0, -2.0])
    x, _ = dda_prox(z, 0.5, ConstraintSet.unconstrained(2))
    np.testing.assert_allclose(x, [-0.5, 1.0])

    box = ConstraintSet.box([0.0, 0.0], [1.0, 1.0])
    x, _ = dda_prox(np.array([3.0, 4.0]), 0.5, box)
    np.testing.assert_allclose(x, [0.0, 0.0])

    x, _ = dda_prox(np.zeros(2), 1.0, box, center=np.array([0.5, 2.0]))
    np.testing.assert_allclose(x, [0.5, 1.0])


def test_extra_step_needs_history():
    state = ExtraState(x=np.zeros(1), x_prev=np.zeros(1), alpha=0.1)
    with pytest.raises(StateError):
        extra_step(state, {0: (np.zeros(1), np.zeros(1))}, {0: 1.0}, scalar_quadratic(0.0))


@pytest.mark.slow
@pytest.mark.parametrize("algorithm", [EXTRA(alpha=0.1), DIGing(alpha=0.05), Canonical(alpha=0.1)])
def test_exact_methods_converge(algorithm, make_quadratics, chain4):
    objectives, reference = make_quadratics(4, 3, seed=9)
    trace = run_rounds(algorithm, objectives, chain4, reference, stop=StopRule(tol_mse=1e-10, cap=5000))
    assert trace.termination == TerminationReason.CONVERGED


@pytest.mark.slow
def test_dgd_and_dda_approach_the_optimum(make_quadratics, chain4):
    objectives, reference = make_quadratics(4, 2, seed=10)
    stop = StopRule(tol_mse=1e-30, cap=2000)
    start = float(reference @ reference)
    for algorithm in (DGD(alpha0=0.5), DDA(alpha0=0.5)):
        trace = run_rounds(algorithm, objectives, chain4, reference, stop=stop)
        assert trace.final_mse < 0.25 * start


# tracking benchmark, four robots on a chain
TRACKING_STOP = StopRule(tol_mse=1e-6, cap=10_000)


@pytest.mark.slow
@pytest.mark.parametrize("algorithm", [EXTRA(alpha=0.005), Canonical(alpha=0.005), DIGing(alpha=0.003)],
                         ids=["extra", "canonical", "diging"])
def test_exact_methods_reach_the_tracking_tolerance(algorithm, tracking_chain):
    problem, graph = tracking_chain
    trace = run_rounds(algorithm, problem.objectives, graph, problem.reference, stop=TRACKING_STOP)
    assert trace.termination == TerminationReason.CONVERGED
    assert trace.final_mse <= 1e-6


@pytest.mark.slow
def test_plain_mixing_diging_stalls_where_lazy_mixing_converges(tracking_chain):
    problem, graph = tracking_chain
    stop = StopRule(tol_mse=1e-6, cap=2000)
    plain = run_rounds(DIGing(alpha=0.003, lazy=False), problem.objectives, graph, problem.reference, stop=stop)
    lazy = run_rounds(DIGing(alpha=0.003), problem.objectives, graph, problem.reference, stop=stop)
    assert not plain.converged
    assert lazy.converged


@pytest.mark.slow
def test_dgd_reaches_a_looser_tolerance_more_slowly_than_extra(tracking_chain):
    # a decaying step leaves DGD with a sublinear tail, so it is held to 1e-4
    problem, graph = tracking_chain
    dgd = run_rounds(DGD(alpha0=0.018), problem.objectives, graph, problem.reference,
                     stop=StopRule(tol_mse=1e-4, cap=10_000))
    extra = run_rounds(EXTRA(alpha=0.005), problem.objectives, graph, problem.reference,
                       stop=StopRule(tol_mse=1e-4, cap=10_000))
    assert dgd.converged and extra.converged
    assert dgd.iterations > 2 * extra.iterations


@pytest.mark.slow
def test_dda_shrinks_the_tracking_error(tracking_chain):
    problem, graph = tracking_chain
    trace = run_rounds(DDA(alpha0=0.03), problem.objectives, graph, problem.reference, stop=TRACKING_STOP)
    assert trace.termination == TerminationReason.ITERATION_CAP
    assert trace.final_mse <= 5e-2 * trace.records[0].mse
