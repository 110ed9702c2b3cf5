from typing import Callable, Dict, List, Optional, Sequence, Tuple

from dataclasses import dataclass, field

import logging
import math
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from src.errors import DistOptError
from src.util_classes import RunTrace, TerminationReason, TunedParameter
from src.vars import DEFAULT_TOL_MSE, GSS_ITERATIONS, SECONDS_PER_FLOAT

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

REPORT_COLUMNS = ["algorithm", "N", "n", "lambda", "t_cp_seconds", "t_cp_ops", "t_cm_floats", "rwc",
                  "converged", "iterations"]
SENSITIVITY_COLUMNS = ["algorithm", "parameter", "value", "final_mse", "iterations", "termination", "diverged"]


# Metrics
def mse(solutions: Sequence[np.ndarray], reference: np.ndarray) -> float:
    """(1/N)·Σ_i ‖x_i − x*‖²."""
    reference = np.asarray(reference, dtype=float)
    if len(solutions) == 0:
        raise ValueError("Need at least one solution")
    total = 0.0
    for i, solution in enumerate(solutions):
        solution = np.asarray(solution, dtype=float)
        if solution.shape != reference.shape:
            raise ValueError(f"Solution {i} has shape {solution.shape}, reference has {reference.shape}")
        diff = solution - reference
        total += float(diff @ diff)
    return total / len(solutions)


def rwc(t_cp: float, t_cm: float, lam: float) -> float:
    """Real-world cost (t_cp + λ·t_cm) / (1 + λ)."""
    if t_cp < 0 or t_cm < 0 or lam < 0:
        raise ValueError(f"RWC needs non-negative inputs, got t_cp={t_cp}, t_cm={t_cm}, λ={lam}")
    if math.isinf(lam):
        return t_cm
    return (t_cp + lam * t_cm) / (1.0 + lam)


def convergence_score(trace: RunTrace, cap: int, tol: float = DEFAULT_TOL_MSE) -> float:
    """
    Scalar minimized by parameter tuning: iterations to tolerance when converged,
    cap·(1 + log10(MSE/tol)) when the cap was hit, +inf on divergence.
    """
    if trace.termination == TerminationReason.DIVERGED or not np.isfinite(trace.final_mse):
        return math.inf
    if trace.converged:
        return float(trace.iterations)
    return cap * (1.0 + math.log10(max(trace.final_mse, tol) / tol))


# Golden-section search
@dataclass
class GssBracket:
    """
    Four candidates a0 < a1 < a2 < a3 with a1 = a0 + φ²h and a2 = a0 + φh. Each shrink keeps one
    interior point, so every step after the first costs a single new evaluation.
    """
    a0: float
    a3: float
    a1: float = field(init=False)
    a2: float = field(init=False)
    h: float = field(init=False)
    cache: Dict[float, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.a0) and math.isfinite(self.a3)):
            raise ValueError(f"Bracket endpoints must be finite, got [{self.a0}, {self.a3}]")
        if self.a0 > self.a3:
            raise ValueError(f"Bracket needs a0 ≤ a3, got [{self.a0}, {self.a3}]")
        self.h = self.a3 - self.a0
        self.a1 = self.a0 + GOLDEN ** 2 * self.h
        self.a2 = self.a0 + GOLDEN * self.h

    @property
    def width(self) -> float:
        return self.a3 - self.a0

    def evaluate(self, score: Callable[[float], float], a: float) -> float:
        if a not in self.cache:
            value = float(score(a))
            if not math.isfinite(value):
                logger.warning(f"Non-finite score at {a:.6g}")
                value = math.inf
            self.cache[a] = value
        return self.cache[a]

    def shrink(self, keep_left: bool):
        self.h *= GOLDEN
        if keep_left:
            self.a3, self.a2 = self.a2, self.a1
            self.a1 = self.a0 + GOLDEN ** 2 * self.h
        else:
            self.a0, self.a1 = self.a1, self.a2
            self.a2 = self.a0 + GOLDEN * self.h

    def best(self) -> Tuple[float, float]:
        a = min(self.cache, key=lambda k: (self.cache[k], k))
        return a, self.cache[a]


@dataclass
class GssResult:
    best: float
    score: float
    evaluations: int
    bracket: GssBracket


def gss_tune(score: Callable[[float], float], a0: float, a3: float, iterations: int = GSS_ITERATIONS,
             progress: bool = False) -> GssResult:
    """
    Golden-section search for the minimizer of a unimodal score on [a0, a3].

    Args:
        score (Callable[[float], float]): Function to minimize; non-finite values count as +inf.
        a0 (float): Left endpoint.
        a3 (float): Right endpoint.
        iterations (int): Number of bracket shrinks.
        progress (bool): Show a progress bar.

    Returns:
        GssResult: Best evaluated candidate, its score and the evaluation count.
    """
    bracket = GssBracket(a0, a3)
    if bracket.width == 0:
        value = bracket.evaluate(score, a0)
        return GssResult(a0, value, 1, bracket)

    for _ in tqdm(range(iterations), disable=not progress, desc="gss", leave=False):
        f1 = bracket.evaluate(score, bracket.a1)
        f2 = bracket.evaluate(score, bracket.a2)
        bracket.shrink(keep_left=f1 < f2)
    bracket.evaluate(score, bracket.a1)
    bracket.evaluate(score, bracket.a2)

    best, value = bracket.best()
    logger.debug(f"GSS finished with bracket [{bracket.a0:.6g}, {bracket.a3:.6g}] after {len(bracket.cache)} evaluations")
    return GssResult(best, value, len(bracket.cache), bracket)


def tune_parameter(evaluate: Callable[[float], RunTrace],
                   algorithm: str,
                   parameter: str,
                   log10_bounds: Tuple[float, float],
                   cap: int,
                   tol: float = DEFAULT_TOL_MSE,
                   iterations: int = GSS_ITERATIONS,
                   progress: bool = False) -> TunedParameter:
    """
    Tune one hyperparameter by golden-section search over its log10.

    Args:
        evaluate (Callable[[float], RunTrace]): Runs the algorithm with the parameter set to the given (linear) value.
        algorithm (str): Algorithm name, for the record.
        parameter (str): Parameter name, for the record.
        log10_bounds (Tuple[float, float]): Search interval on log10 scale.
        cap (int): Iteration cap used by `evaluate`, for scoring capped runs.
        tol (float): MSE tolerance used by `evaluate`.
        iterations (int): GSS iterations.
        progress (bool): Show a progress bar.

    Returns:
        TunedParameter: Best value found and its score.
    """
    def score(log_value: float) -> float:
        trace = evaluate(10.0 ** log_value)
        value = convergence_score(trace, cap, tol)
        logger.debug(f"{algorithm} {parameter}=10^{log_value:.4f}: score {value:.6g}")
        return value

    result = gss_tune(score, log10_bounds[0], log10_bounds[1], iterations, progress)
    tuned = TunedParameter(
        algorithm=algorithm,
        parameter=parameter,
        value=10.0 ** result.best,
        log10_value=result.best,
        score=result.score,
        evaluations=result.evaluations,
    )
    logger.info(f"Tuned {algorithm} {parameter} = {tuned.value:.6g} (score {tuned.score:.6g}, "
                f"{tuned.evaluations} evaluations)")
    return tuned


# Sweeps
def stepsize_sensitivity(evaluate: Callable[[float], RunTrace],
                         algorithm: str,
                         parameter: str,
                         grid: Sequence[float],
                         n_jobs: int = 1,
                         progress: bool = False) -> pd.DataFrame:
    """
    Final MSE after a capped run at every grid value of one hyperparameter.

    Returns:
        pd.DataFrame: One row per grid value with SENSITIVITY_COLUMNS; `diverged` flags blown-up runs.
    """
    grid = [float(v) for v in grid]
    if not grid or not all(math.isfinite(v) for v in grid):
        raise ValueError("Sensitivity grid must be a nonempty list of finite values")

    traces = Parallel(n_jobs=n_jobs)(
        delayed(evaluate)(value) for value in tqdm(grid, disable=not progress, desc=f"{algorithm} {parameter}"))

    rows = []
    for value, trace in zip(grid, traces):
        diverged = trace.termination == TerminationReason.DIVERGED
        rows.append([algorithm, parameter, value, trace.final_mse, trace.iterations, trace.termination.value, diverged])
    frame = pd.DataFrame(rows, columns=SENSITIVITY_COLUMNS)
    logger.info(f"{algorithm} sensitivity over {len(grid)} values of {parameter}: "
                f"{int(frame['diverged'].sum())} diverged")
    return frame


@dataclass
class SweepCell:
    """One (algorithm, problem size) run of an RWC sweep. N and n stay None when the problem was never built."""
    algorithm: str
    num_nodes: Optional[int]
    dim: Optional[int]
    trace: Optional[RunTrace] = None
    error: Optional[str] = None


@dataclass
class RwcReport:
    lambdas: List[float]
    cells: List[SweepCell]
    seconds_per_float: float = SECONDS_PER_FLOAT
    frame: pd.DataFrame = field(init=False)

    def __post_init__(self):
        rows = []
        for cell in self.cells:
            for lam in self.lambdas:
                if cell.trace is None:
                    rows.append([cell.algorithm, _size(cell.num_nodes), _size(cell.dim), lam, math.nan, math.nan,
                                 math.nan, math.nan, False, 0])
                    continue
                last = cell.trace.last
                t_cm = last.cum_floats * self.seconds_per_float
                rows.append([cell.algorithm, cell.num_nodes, cell.dim, lam, last.cum_seconds, last.cum_ops,
                             last.cum_floats, rwc(last.cum_seconds, t_cm, lam), cell.trace.converged, last.iteration])
        self.frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def ordering(self, lam: float, dim: Optional[int] = None) -> List[str]:
        """Algorithms sorted by RWC at one λ (and optionally one problem size)."""
        rows = self.frame[self.frame["lambda"] == lam]
        if dim is not None:
            rows = rows[rows["n"] == dim]
        return rows.sort_values(["rwc", "algorithm"])["algorithm"].tolist()

    def to_csv(self, path: str):
        self.frame.to_csv(path, index=False, float_format="%.17g")


def _size(value: Optional[int]) -> float:
    return math.nan if value is None else value


def _run_cell(run_cell: Callable[[str, int], SweepCell], algorithm: str, size: int) -> SweepCell:
    try:
        return run_cell(algorithm, size)
    except DistOptError as e:
        logger.error(f"Sweep cell {algorithm} at size {size} failed: {e}")
        return SweepCell(algorithm, None, None, None, str(e))


def sweep_rwc(run_cell: Callable[[str, int], SweepCell],
              algorithms: Sequence[str],
              sizes: Sequence[int],
              lambdas: Sequence[float],
              seconds_per_float: float = SECONDS_PER_FLOAT,
              n_jobs: int = 1,
              progress: bool = False) -> RwcReport:
    """
    Run every (algorithm, size) cell and evaluate RWC for each λ.

    Args:
        run_cell (Callable[[str, int], SweepCell]): Tunes and runs one algorithm at one size.
        algorithms (Sequence[str]): Algorithm labels passed through to `run_cell`.
        sizes (Sequence[int]): Problem-size values passed through to `run_cell`.
        lambdas (Sequence[float]): RWC weights.
        seconds_per_float (float): Communication time per transmitted float.
        n_jobs (int): joblib workers; 1 runs cells in order.
        progress (bool): Show a progress bar over cells.

    Returns:
        RwcReport: Per-cell, per-λ report. Failed cells keep NaN costs and converged = False. A cell
            whose problem was built before the failure keeps its N and n; `run_cell` reports such
            failures itself.
    """
    if not algorithms or not sizes or not lambdas:
        raise ValueError("Sweep axes must be nonempty")
    if any(lam < 0 for lam in lambdas):
        raise ValueError("RWC weights must be non-negative")

    jobs = [(algorithm, size) for size in sizes for algorithm in algorithms]
    cells = Parallel(n_jobs=n_jobs)(
        delayed(_run_cell)(run_cell, algorithm, size)
        for algorithm, size in tqdm(jobs, disable=not progress, desc="sweep"))
    report = RwcReport(list(lambdas), list(cells), seconds_per_float)
    logger.info(f"RWC sweep finished: {len(jobs)} cells, {len(lambdas)} λ values")
    return report
