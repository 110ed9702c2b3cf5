from typing import Dict, List, Optional

import numpy as np


class DistOptError(Exception):
    """Base class for every error raised by the toolkit."""


class CapabilityError(DistOptError):
    """An objective lacks a capability the algorithm requires."""

    def __init__(self, node: Optional[int], capability: str):
        self.node = node
        self.capability = capability
        where = "objective" if node is None else f"node {node}"
        super().__init__(f"{where} does not provide the '{capability}' capability")


class DivergenceError(DistOptError):
    """A non-finite iterate, gradient or direction was produced."""

    def __init__(self, iteration: Optional[int] = None, node: Optional[int] = None, what: str = "iterate"):
        self.iteration = iteration
        self.node = node
        self.what = what
        parts = [f"non-finite {what}"]
        if node is not None:
            parts.append(f"at node {node}")
        if iteration is not None:
            parts.append(f"in iteration {iteration}")
        super().__init__(" ".join(parts))


class StateError(DistOptError):
    """A step was called on a state that cannot support it."""


class FactorizationError(DistOptError):
    """A local matrix could not be factorized."""


class ParameterError(DistOptError, ValueError):
    """A hyperparameter is outside its valid range."""


class InnerSolverError(DistOptError):
    """An inner solve hit its iteration cap or missed its tolerance."""

    def __init__(self, message: str, best: Optional[np.ndarray] = None, residual: float = float("nan")):
        self.best = best
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class MappingError(DistOptError, ValueError):
    """Coordinate maps on an edge are inconsistent with the local variables."""


class GraphError(DistOptError, ValueError):
    """Invalid topology input."""


class DisconnectedGraphError(GraphError):
    """The generated topology is not connected."""

    def __init__(self, components: List[List[int]]):
        self.components = components
        super().__init__(f"graph is disconnected into {len(components)} components: {components}")


class InstanceError(DistOptError, ValueError):
    """A benchmark instance could not be constructed."""


class ConfigError(DistOptError, ValueError):
    """Malformed experiment configuration."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, str]] = None):
        self.diagnostics = diagnostics or {}
        detail = "; ".join(f"{k}: {v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message}: {detail}" if detail else message)
