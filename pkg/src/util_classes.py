from typing import Dict, List, Optional
from enum import Enum

from dataclasses import dataclass, field
from pydantic import BaseModel, Field

import numpy as np
import pandas as pd


class TerminationReason(str, Enum):
    CONVERGED = "converged"
    ITERATION_CAP = "iteration_cap"
    DIVERGED = "diverged"


# Traces
@dataclass
class TraceRecord:
    """Counters after one iteration of a run. Cumulative fields are network-wide."""
    iteration: int
    mse: float
    cum_floats: int
    cum_ops: int
    cum_seconds: float
    cum_wall_seconds: float


TRACE_COLUMNS = ["iteration", "mse", "cum_floats", "cum_ops", "cum_seconds"]


@dataclass
class RunTrace:
    algorithm: str
    records: List[TraceRecord] = field(default_factory=list)
    termination: Optional[TerminationReason] = None
    estimates: List[np.ndarray] = field(default_factory=list)
    diverged_at: Optional[int] = None
    agreement: Optional[float] = None

    def append(self, record: TraceRecord):
        if self.records:
            last = self.records[-1]
            if record.cum_floats < last.cum_floats or record.cum_ops < last.cum_ops:
                raise ValueError(f"Trace counters must be nondecreasing (iteration {record.iteration})")
        self.records.append(record)

    @property
    def last(self) -> TraceRecord:
        return self.records[-1]

    @property
    def iterations(self) -> int:
        return self.last.iteration

    @property
    def final_mse(self) -> float:
        return self.last.mse

    @property
    def converged(self) -> bool:
        return self.termination == TerminationReason.CONVERGED

    def iterations_to(self, level: float) -> Optional[int]:
        """First iteration whose MSE is at or below `level`, or None."""
        for record in self.records:
            if record.mse <= level:
                return record.iteration
        return None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[r.iteration, r.mse, r.cum_floats, r.cum_ops, r.cum_seconds] for r in self.records],
            columns=TRACE_COLUMNS,
        )


# Summaries
class RunSummary(BaseModel):
    """JSON summary written next to a trace"""
    algorithm: str = Field(..., description="Registered algorithm name")
    problem: str = Field(..., description="Problem instance name")
    termination: TerminationReason = Field(..., description="Why the run stopped")
    iterations: int = Field(..., description="Iterations completed")
    final_mse: float = Field(..., description="MSE against the centralized solution at the last iteration")
    cum_floats: int = Field(..., description="Floats transmitted network-wide")
    cum_ops: int = Field(..., description="Operation-count compute proxy, network-wide")
    cum_seconds: float = Field(..., description="Compute seconds under the configured clock")
    cum_wall_seconds: float = Field(..., description="Measured wall-clock seconds of node updates")
    parameters: Dict[str, float] = Field(default_factory=dict, description="Hyperparameters used for the run")
    tuned: Dict[str, float] = Field(default_factory=dict, description="Hyperparameters chosen by golden-section search")
    agreement_residual: Optional[float] = Field(None, description="Largest disagreement between node estimates at the end")


class TunedParameter(BaseModel):
    """Result of a golden-section search over one hyperparameter"""
    algorithm: str = Field(..., description="Registered algorithm name")
    parameter: str = Field(..., description="Name of the tuned hyperparameter")
    value: float = Field(..., description="Best evaluated value (linear scale)")
    log10_value: float = Field(..., description="Best evaluated value on the search scale")
    score: float = Field(..., description="Convergence score of the best evaluation")
    evaluations: int = Field(..., description="Number of distinct score evaluations")
