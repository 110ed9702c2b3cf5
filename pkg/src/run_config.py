from typing import Any, Dict, List, Literal, Optional, Tuple

import json
import logging

from pydantic import BaseModel, Field, ValidationError, model_validator

from src.errors import ConfigError
from src.vars import (DEFAULT_BLOWUP_MSE, DEFAULT_ITERATION_CAP, DEFAULT_TOL_MSE, GSS_ITERATIONS,
                      GSS_LOG10_BOUNDS, SECONDS_PER_FLOAT, SECONDS_PER_OP)

logger = logging.getLogger(__name__)

ALGORITHM_NAMES = ("dgd", "extra", "dda", "canonical", "diging", "nnk", "next", "cadmm", "sova")


class ProblemConfig(BaseModel):
    """Which benchmark instance to run on"""
    kind: Literal["tracking", "delivery", "mapping", "file"] = Field(..., description="Problem generator, or a saved instance document")
    params: Dict[str, Any] = Field(default_factory=dict, description="Keyword arguments of the generator")
    path: Optional[str] = Field(None, description="Instance document for kind 'file'")
    oracle_starts: int = Field(8, ge=8, description="Multi-start count of the mapping oracle")

    @model_validator(mode="after")
    def _file_needs_path(self):
        if self.kind == "file" and not self.path:
            raise ValueError("problem kind 'file' needs a path")
        return self


class GraphConfig(BaseModel):
    """Communication topology"""
    kind: Literal["range_limited", "chain", "complete", "random_range", "file"] = Field("range_limited", description="Graph construction")
    radius: Optional[float] = Field(None, gt=0, description="Communication radius for range-limited graphs")
    path: Optional[str] = Field(None, description="Edge-list file for kind 'file'")

    @model_validator(mode="after")
    def _required_fields(self):
        if self.kind in ("range_limited", "random_range") and self.radius is None:
            raise ValueError(f"graph kind '{self.kind}' needs a radius")
        if self.kind == "file" and not self.path:
            raise ValueError("graph kind 'file' needs a path")
        return self


class TuneConfig(BaseModel):
    """Golden-section search over one hyperparameter on log10 scale"""
    parameter: str = Field(..., description="Hyperparameter to tune")
    log10_bounds: Tuple[float, float] = Field(GSS_LOG10_BOUNDS, description="Search interval of log10(value)")
    iterations: int = Field(GSS_ITERATIONS, ge=0, description="Bracket shrinks")
    cap: Optional[int] = Field(None, ge=0, description="Iteration cap of tuning runs; the run cap when omitted")

    @model_validator(mode="after")
    def _ordered_bounds(self):
        if self.log10_bounds[0] > self.log10_bounds[1]:
            raise ValueError("log10_bounds must be ordered (low, high)")
        return self


class AlgorithmConfig(BaseModel):
    """Algorithm and its hyperparameters"""
    name: Literal[ALGORITHM_NAMES] = Field(..., description="Registered algorithm name")
    params: Dict[str, Any] = Field(default_factory=dict, description="Constructor keyword arguments")
    tune: Optional[TuneConfig] = Field(None, description="Tune one parameter before running")
    label: Optional[str] = Field(None, description="Name used in reports; the algorithm name when omitted")
    tuned_path: Optional[str] = Field(None, description="tuned.json whose value overrides the matching parameter")

    @property
    def display_name(self) -> str:
        return self.label or self.name


class StopConfig(BaseModel):
    tol_mse: float = Field(DEFAULT_TOL_MSE, gt=0, description="Converged when MSE falls to this level")
    cap: int = Field(DEFAULT_ITERATION_CAP, ge=0, description="Iteration cap")
    blowup: float = Field(DEFAULT_BLOWUP_MSE, gt=0, description="Diverged when MSE reaches this level")
    normalize: bool = Field(False, description="Divide the MSE by ‖x*‖²")


class AccountingConfig(BaseModel):
    compute_clock: Literal["proxy", "wallclock"] = Field("proxy", description="How compute seconds are reported")
    seconds_per_op: float = Field(SECONDS_PER_OP, gt=0, description="Seconds per counted operation under the proxy clock")
    seconds_per_float: float = Field(SECONDS_PER_FLOAT, gt=0, description="Seconds per transmitted float")


class SweepConfig(BaseModel):
    """Parameter sweeps: RWC over problem sizes and λ, or step-size sensitivity"""
    kind: Literal["rwc", "stepsize"] = Field(..., description="Sweep type")
    algorithms: List[AlgorithmConfig] = Field(..., min_length=1, description="Algorithms to compare")
    sizes: List[int] = Field(default_factory=list, description="Values of the problem's size parameter (rwc)")
    size_parameter: Optional[str] = Field(None, description="Generator parameter the sizes set; per-kind default when omitted")
    lambdas: List[float] = Field(default_factory=lambda: [0.0], description="RWC weights (rwc)")
    parameter: Optional[str] = Field(None, description="Hyperparameter swept (stepsize)")
    grid: List[float] = Field(default_factory=list, description="Values of the swept hyperparameter (stepsize)")
    n_jobs: int = Field(1, description="joblib workers for independent cells")

    @model_validator(mode="after")
    def _axes_present(self):
        if self.kind == "rwc":
            if not self.sizes:
                raise ValueError("rwc sweep needs sizes")
            if not self.lambdas or any(lam < 0 for lam in self.lambdas):
                raise ValueError("rwc sweep needs non-negative lambdas")
        if self.kind == "stepsize" and (not self.parameter or not self.grid):
            raise ValueError("stepsize sweep needs a parameter and a grid")
        return self


class RunConfig(BaseModel):
    """One experiment file"""
    problem: ProblemConfig
    graph: GraphConfig = Field(default_factory=lambda: GraphConfig(kind="chain"), description="Topology; a chain when omitted")
    algorithm: Optional[AlgorithmConfig] = Field(None, description="Algorithm for run and tune")
    stop: StopConfig = Field(default_factory=StopConfig)
    accounting: AccountingConfig = Field(default_factory=AccountingConfig)
    sweep: Optional[SweepConfig] = Field(None, description="Sweep definition for the sweep command")
    seed: int = Field(0, ge=0, description="Seed for instance generation and random graphs")
    out: str = Field("results", description="Output directory")


def _diagnostics(error: ValidationError) -> Dict[str, str]:
    return {".".join(str(part) for part in e["loc"]) or "<root>": e["msg"] for e in error.errors()}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """
    Parse and validate an experiment file.

    Raises:
        ConfigError: With the JSON line and column, or the failing field paths.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}",
                          {"line": str(e.lineno), "column": str(e.colno)})
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        diagnostics = _diagnostics(e)
        details = "; ".join(f"{k}: {v}" for k, v in diagnostics.items())
        raise ConfigError(f"{source}: {details}", diagnostics)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r") as file:
            text = file.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}", {"path": path})
    config = parse_config(text, path)
    logger.debug(f"Loaded config {path}")
    return config
