import numpy as np
import pytest

from src.admm_methods import CADMM
from src.core import (ComputeClock, ConstraintSet, NodeEnvelope, RoundExecutor, StopRule, check_stop, lazy_weights,
                      run_rounds)
from src.errors import CapabilityError, DivergenceError, StateError
from src.gradient_methods import DDA, DGD, DIGing, EXTRA
from src.graph import CommGraph, chain_graph
from src.newton_methods import NEXT, NetworkNewton, NnkState
from src.objectives import QuadraticObjective
from src.util_classes import RunTrace, TerminationReason, TraceRecord
from helpers import GradientOnlyObjective, scalar_quadratic

NO_CONVERGENCE = StopRule(tol_mse=1e-30, cap=3)


def _trace_with(mse: float, iteration: int) -> RunTrace:
    trace = RunTrace(algorithm="test")
    trace.append(TraceRecord(iteration, mse, 0, 0, 0.0, 0.0))
    return trace


def test_constraint_set_kinds():
    assert ConstraintSet.unconstrained(2).kind == "none"
    assert ConstraintSet.box([0.0, 0.0], [1.0, 1.0]).kind == "box"
    assert ConstraintSet(2, eq_matrix=[[1.0, 1.0]], eq_vector=[1.0]).kind == "affine"
    assert ConstraintSet(2, lower=[0.0, 0.0], eq_matrix=[[1.0, 1.0]], eq_vector=[1.0]).kind == "composite"


def test_box_projection_clips():
    box = ConstraintSet.box([0.0, -1.0], [1.0, 1.0])
    np.testing.assert_allclose(box.project(np.array([2.0, -3.0])), [1.0, -1.0])
    assert box.contains(np.array([0.5, 0.0]))
    assert box.violation(np.array([2.0, 0.0])) == pytest.approx(1.0)


def test_affine_projection():
    plane = ConstraintSet(2, eq_matrix=[[1.0, 1.0]], eq_vector=[1.0])
    np.testing.assert_allclose(plane.project(np.array([3.0, 0.0])), [2.0, -1.0], atol=1e-9)


def test_intersect_combines_bounds_and_equalities():
    a = ConstraintSet.box([0.0, 0.0], [2.0, 2.0])
    b = ConstraintSet(2, lower=[1.0, -5.0], eq_matrix=[[1.0, 0.0]], eq_vector=[1.5])
    both = a.intersect(b)
    np.testing.assert_allclose(both.lower, [1.0, 0.0])
    np.testing.assert_allclose(both.upper, [2.0, 2.0])
    assert both.kind == "composite"
    assert both.contains(np.array([1.5, 1.0]))


def test_constraint_document_round_trip():
    original = ConstraintSet(2, lower=[0.0, -np.inf], eq_matrix=[[1.0, 2.0]], eq_vector=[3.0])
    restored = ConstraintSet.from_document(original.to_document())
    np.testing.assert_array_equal(restored.lower, original.lower)
    np.testing.assert_array_equal(restored.upper, original.upper)
    np.testing.assert_array_equal(restored.eq_matrix, original.eq_matrix)


def test_check_stop():
    assert check_stop(_trace_with(1e-7, 5), 1e-6, 100, 1e12) == TerminationReason.CONVERGED
    assert check_stop(_trace_with(1e-3, 100), 1e-6, 100, 1e12) == TerminationReason.ITERATION_CAP
    assert check_stop(_trace_with(1e13, 5), 1e-6, 100, 1e12) == TerminationReason.DIVERGED
    assert check_stop(_trace_with(float("nan"), 5), 1e-6, 100, 1e12) == TerminationReason.DIVERGED
    assert check_stop(_trace_with(1e-3, 5), 1e-6, 100, 1e12) is None


def test_stop_rule_validation():
    with pytest.raises(ValueError):
        StopRule(tol_mse=0.0)
    with pytest.raises(ValueError):
        StopRule(tol_mse=1.0, blowup=0.5)
    with pytest.raises(ValueError):
        StopRule(cap=-1)


def test_single_node_dgd_step():
    graph = CommGraph(1, [])
    trace = run_rounds(DGD(alpha0=0.1, schedule="constant"), [scalar_quadratic(0.0)], graph,
                       np.array([0.0]), stop=StopRule(tol_mse=1e-30, cap=1), x0=np.array([1.0]))
    np.testing.assert_allclose(trace.estimates[0], [0.9])
    assert trace.records[1].mse == pytest.approx(0.81)
    assert trace.last.cum_floats == 0


def test_cap_zero_records_only_the_start(two_node_scalar):
    objectives, graph, reference = two_node_scalar
    trace = run_rounds(DGD(), objectives, graph, reference, stop=StopRule(cap=0))
    assert len(trace.records) == 1
    assert trace.termination == TerminationReason.ITERATION_CAP
    assert trace.records[0].mse == pytest.approx(1.0)


def test_constant_cost_dgd_is_pure_averaging(chain4):
    objectives = [QuadraticObjective(np.zeros((1, 1)), np.zeros(1)) for _ in range(4)]
    starts = [np.array([float(v)]) for v in (4.0, 0.0, -2.0, 6.0)]
    executor = RoundExecutor(DGD(alpha0=1.0), objectives, chain4)
    trace = executor.run(np.array([100.0]), stop=StopRule(tol_mse=1e-30, cap=6), x0=starts)

    expected = np.linalg.matrix_power(executor.weights.W, 6) @ np.array([4.0, 0.0, -2.0, 6.0])
    np.testing.assert_allclose(np.concatenate(trace.estimates), expected, atol=1e-12)


def test_update_order_does_not_change_the_trace(make_quadratics, chain4):
    reference = make_quadratics(4, 2, seed=3)[1]
    forward = run_rounds(EXTRA(alpha=0.1), make_quadratics(4, 2, seed=3)[0], chain4, reference,
                         stop=StopRule(tol_mse=1e-30, cap=20))
    backward = run_rounds(EXTRA(alpha=0.1), make_quadratics(4, 2, seed=3)[0], chain4, reference,
                          stop=StopRule(tol_mse=1e-30, cap=20), node_order=[3, 2, 1, 0])
    assert [r.mse for r in forward.records] == [r.mse for r in backward.records]
    for a, b in zip(forward.estimates, backward.estimates):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("algorithm, floats_per_edge_end", [
    (DGD(), 1),
    (EXTRA(alpha=0.05), 2),
    (NetworkNewton(alpha=1.0, K=2), 3),
    (DDA(), 1),
    (DIGing(alpha=0.05), 2),
    (NEXT(alpha0=0.1), 2),
    (CADMM(rho=1.0), 1),
])
def test_float_accounting(algorithm, floats_per_edge_end, make_quadratics, chain4):
    dim = 2
    objectives, reference = make_quadratics(4, dim, seed=1)
    trace = run_rounds(algorithm, objectives, chain4, reference, stop=NO_CONVERGENCE)
    directed_edges = 2 * chain4.num_edges
    for record in trace.records:
        assert record.cum_floats == record.iteration * floats_per_edge_end * directed_edges * dim


def test_counters_are_nondecreasing(make_quadratics, chain4):
    objectives, reference = make_quadratics(4, 3, seed=2)
    trace = run_rounds(NetworkNewton(alpha=1.0, K=1), objectives, chain4, reference,
                       stop=StopRule(tol_mse=1e-30, cap=10))
    ops = [r.cum_ops for r in trace.records]
    assert ops == sorted(ops)
    assert ops[-1] > 0


def test_missing_capability_is_rejected(chain4):
    objectives = [GradientOnlyObjective([float(i)]) for i in range(4)]
    with pytest.raises(CapabilityError):
        RoundExecutor(NetworkNewton(), objectives, chain4)


def test_divergence_is_recorded(two_node_scalar):
    objectives, graph, reference = two_node_scalar
    trace = run_rounds(DGD(alpha0=10.0, schedule="constant"), objectives, graph, reference,
                       stop=StopRule(cap=200))
    assert trace.termination == TerminationReason.DIVERGED
    assert trace.iterations < 200


def test_divergence_can_raise(two_node_scalar):
    objectives, graph, reference = two_node_scalar
    with pytest.raises(DivergenceError):
        run_rounds(DGD(alpha0=10.0, schedule="constant"), objectives, graph, reference,
                   stop=StopRule(cap=200), raise_on_divergence=True)


def test_proxy_clock_is_deterministic(make_quadratics, chain4):
    clock = ComputeClock(kind="proxy", seconds_per_op=2e-9)
    runs = []
    for _ in range(2):
        objectives, reference = make_quadratics(4, 2, seed=5)
        runs.append(run_rounds(DIGing(alpha=0.05), objectives, chain4, reference,
                               stop=StopRule(tol_mse=1e-30, cap=15), clock=clock))
    for record in runs[0].records:
        assert record.cum_seconds == pytest.approx(record.cum_ops * 2e-9)
    assert [r.cum_seconds for r in runs[0].records] == [r.cum_seconds for r in runs[1].records]


def test_unknown_clock_kind():
    with pytest.raises(ValueError):
        ComputeClock(kind="sundial")


def test_node_order_must_be_a_permutation(two_node_scalar):
    objectives, graph, reference = two_node_scalar
    with pytest.raises(ValueError):
        run_rounds(DGD(), objectives, graph, reference, node_order=[0, 0])


def test_executor_requires_one_objective_per_node(two_node_scalar):
    objectives, _, _ = two_node_scalar
    with pytest.raises(ValueError):
        RoundExecutor(DGD(), objectives, chain_graph(3))


def test_lazy_weights_halve_the_row():
    row = lazy_weights({0: 0.5, 1: 0.25, 2: 0.25}, 0)
    assert row == pytest.approx({0: 0.75, 1: 0.125, 2: 0.125})
    assert sum(row.values()) == pytest.approx(1.0)
    assert lazy_weights({1: 1.0}, 0) == pytest.approx({0: 0.5, 1: 0.5})


def test_publish_refuses_private_and_parameter_fields():
    state = NnkState(x=np.array([1.0]), alpha=1.0, epsilon=1.0, K=1, g=np.array([2.0]))
    envelope = NodeEnvelope(0, state)
    published = envelope.publish(("x",))
    published["x"][0] = 5.0
    assert state.x[0] == 1.0
    with pytest.raises(StateError, match="private"):
        envelope.publish(("x", "g"))
    with pytest.raises(StateError, match="parameter"):
        envelope.publish(("alpha",))


def test_agreement_is_reported(make_quadratics, chain4):
    objectives, reference = make_quadratics(4, 2, seed=3)
    trace = run_rounds(EXTRA(alpha=0.1), objectives, chain4, reference, stop=NO_CONVERGENCE)
    spread = np.max(np.ptp(np.stack(trace.estimates), axis=0))
    assert trace.agreement == pytest.approx(spread)
    assert trace.agreement > 0


def test_diverged_runs_report_no_agreement(two_node_scalar):
    objectives, graph, reference = two_node_scalar
    trace = run_rounds(DGD(alpha0=10.0, schedule="constant"), objectives, graph, reference, stop=StopRule(cap=200))
    assert trace.termination == TerminationReason.DIVERGED
    assert trace.agreement is None
