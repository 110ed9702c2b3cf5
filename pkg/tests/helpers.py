import numpy as np

from src.core import LocalObjective
from src.objectives import QuadraticObjective


class GradientOnlyObjective(LocalObjective):
    """½‖x − a‖² without Hessian access."""

    def __init__(self, anchor):
        anchor = np.asarray(anchor, dtype=float)
        super().__init__(anchor.shape[0])
        self.anchor = anchor

    def _value(self, x):
        d = x - self.anchor
        return float(0.5 * d @ d)

    def _gradient(self, x):
        return x - self.anchor


def scalar_quadratic(a: float) -> QuadraticObjective:
    """f(x) = ½(x − a)² on ℝ."""
    return QuadraticObjective(np.array([[1.0]]), np.array([-a]), 0.5 * a * a)
