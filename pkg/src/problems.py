from typing import Any, Dict, Union

import inspect
import json
import logging

from src.core import ProblemInstance
from src.delivery_problem import DeliveryInstance, build_delivery_instance
from src.errors import InstanceError
from src.mapping_problem import MappingInstance, build_mapping_instance
from src.tracking_problem import TrackingInstance, build_tracking_instance

logger = logging.getLogger(__name__)

Instance = Union[TrackingInstance, DeliveryInstance, MappingInstance]

BUILDERS = {
    "tracking": build_tracking_instance,
    "delivery": build_delivery_instance,
    "mapping": build_mapping_instance,
}

DOCUMENT_TYPES = {
    "tracking": TrackingInstance,
    "delivery": DeliveryInstance,
    "mapping": MappingInstance,
}

# parameter that sets the decision dimension n, per kind
SIZE_PARAMETERS = {
    "tracking": "horizon",
    "delivery": "horizon",
    "mapping": "num_landmarks",
}


def build_instance(kind: str, params: Dict[str, Any], seed: int = 0) -> Instance:
    """
    Generate a benchmark instance.

    Args:
        kind (str): "tracking", "delivery" or "mapping".
        params (Dict[str, Any]): Keyword arguments of the kind's builder.
        seed (int): Seed passed to the builder.

    Returns:
        Instance: The generated instance.
    """
    if kind not in BUILDERS:
        raise InstanceError(f"Unknown problem kind '{kind}', expected one of {sorted(BUILDERS)}")
    builder = BUILDERS[kind]
    accepted = set(inspect.signature(builder).parameters) - {"seed"}
    unknown = sorted(set(params) - accepted)
    if unknown:
        raise InstanceError(f"Unknown {kind} parameters {unknown}; accepted: {sorted(accepted)}")
    logger.info(f"Building {kind} instance with {params} (seed {seed})")
    return builder(seed=seed, **params)


def instance_from_document(doc: Dict[str, Any]) -> Instance:
    kind = doc.get("kind")
    if kind not in DOCUMENT_TYPES:
        raise InstanceError(f"Instance document has unknown kind '{kind}'")
    return DOCUMENT_TYPES[kind].from_document(doc)


def write_instance(instance: Instance, path: str):
    with open(path, "w") as file:
        json.dump(instance.to_document(), file)
    logger.info(f"Wrote {instance.to_document()['kind']} instance to {path}")


def read_instance(path: str) -> Instance:
    with open(path, "r") as file:
        doc = json.load(file)
    return instance_from_document(doc)


def instance_kind(instance: Instance) -> str:
    for kind, cls in DOCUMENT_TYPES.items():
        if isinstance(instance, cls):
            return kind
    raise InstanceError(f"Not a benchmark instance: {type(instance).__name__}")


def to_problem(instance: Instance, oracle_starts: int = 8, seed: int = 0) -> ProblemInstance:
    """Objectives, centralized reference and metadata for a run."""
    if isinstance(instance, MappingInstance):
        return instance.to_problem(name="mapping", starts=oracle_starts, seed=seed)
    return instance.to_problem(name=instance_kind(instance))
