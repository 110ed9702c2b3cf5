from typing import Dict, FrozenSet, Optional, Tuple

import logging
import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.core import ARGMIN, GRADIENT, HESSIAN, ArgminSolver, ConstraintSet, LocalObjective
from src.errors import FactorizationError
from src.qp_solver import QpResult


class FactoredArgminSolver(ArgminSolver):
    """Unconstrained quadratic argmin: one Cholesky factorization, then back-substitutions."""

    def __init__(self, matrix: np.ndarray, offset: np.ndarray):
        self._matrix = matrix
        self._offset = offset
        self._factor = None

    def solve(self, linear: np.ndarray, warm: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int]:
        n = self._matrix.shape[0]
        ops = 2 * n * n
        if self._factor is None:
            try:
                self._factor = cho_factor(self._matrix)
            except LinAlgError as e:
                raise FactorizationError(f"Penalized quadratic is not positive definite: {e}")
            ops += n ** 3 // 3
        return cho_solve(self._factor, -(self._offset + linear)), ops


class ConstrainedArgminSolver(ArgminSolver):
    """Quadratic argmin over box and affine constraints through the active-set QP solver."""

    def __init__(self, matrix: np.ndarray, offset: np.ndarray, constraints: ConstraintSet):
        self._qp = constraints.qp_solver(matrix)
        self._offset = offset
        self.last: Optional[QpResult] = None

    def solve(self, linear: np.ndarray, warm: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int]:
        self.last = self._qp.solve(self._offset + linear, warm=self.last)
        return self.last.x, self.last.ops


class QuadraticObjective(LocalObjective):
    """f(x) = ½xᵀHx + cᵀx + r, optionally restricted to a constraint set."""

    def __init__(self,
                 hessian: np.ndarray,
                 linear: np.ndarray,
                 constant: float = 0.0,
                 constraints: Optional[ConstraintSet] = None):
        H = np.asarray(hessian, dtype=float)
        super().__init__(H.shape[0], constraints)
        self.H = 0.5 * (H + H.T)
        self.c = np.asarray(linear, dtype=float).reshape(self.dim)
        self.r = float(constant)
        self._solvers: Dict[bytes, ArgminSolver] = {}

    @property
    def capabilities(self) -> FrozenSet[str]:
        return frozenset({GRADIENT, HESSIAN, ARGMIN})

    @property
    def value_cost(self) -> int:
        return 2 * self.dim * self.dim

    @property
    def gradient_cost(self) -> int:
        return 2 * self.dim * self.dim

    @property
    def hessian_cost(self) -> int:
        return self.dim

    def _value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.c @ x + self.r)

    def _gradient(self, x: np.ndarray) -> np.ndarray:
        return self.H @ x + self.c

    def _hessian(self, x: np.ndarray) -> np.ndarray:
        return self.H.copy()

    def argmin_solver(self, quad: np.ndarray) -> ArgminSolver:
        key = np.asarray(quad, dtype=float).tobytes()
        if key not in self._solvers:
            matrix = self.H + quad
            if self.constraints.kind == "none":
                self._solvers[key] = FactoredArgminSolver(matrix, self.c)
            else:
                self._solvers[key] = ConstrainedArgminSolver(matrix, self.c, self.constraints)
        return self._solvers[key]

    def to_document(self) -> dict:
        return {
            "type": "quadratic",
            "hessian": self.H.tolist(),
            "linear": self.c.tolist(),
            "constant": self.r,
            "constraints": self.constraints.to_document(),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "QuadraticObjective":
        return cls(np.array(doc["hessian"], dtype=float),
                   np.array(doc["linear"], dtype=float),
                   doc.get("constant", 0.0),
                   ConstraintSet.from_document(doc["constraints"]))


def least_squares_objective(H: np.ndarray, W: np.ndarray, z: np.ndarray,
                            constraints: Optional[ConstraintSet] = None) -> QuadraticObjective:
    """
    f(x) = ‖z − Hx‖²_{W⁻¹} as a QuadraticObjective.

    Args:
        H (np.ndarray): Stacked model matrix.
        W (np.ndarray): Block-diagonal covariance; only its inverse enters the cost.
        z (np.ndarray): Stacked data vector.
        constraints (Optional[ConstraintSet]): Constraint set of the node.

    Returns:
        QuadraticObjective: Hessian 2HᵀW⁻¹H, linear term −2HᵀW⁻¹z, constant zᵀW⁻¹z.
    """
    W_inv_H = np.linalg.solve(W, H)
    W_inv_z = np.linalg.solve(W, z)
    return QuadraticObjective(2.0 * H.T @ W_inv_H, -2.0 * H.T @ W_inv_z, float(z @ W_inv_z), constraints)
