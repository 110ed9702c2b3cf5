from typing import Dict, FrozenSet, Optional, Tuple

from dataclasses import dataclass

import logging
import warnings
import numpy as np
import cvxpy as cp
from scipy.linalg import LinAlgError, LinAlgWarning, cho_factor, cho_solve, lstsq, lu_factor, lu_solve, qr

from src.errors import InnerSolverError
from src.vars import INNER_ITERATION_CAP, KKT_TOLERANCE

logger = logging.getLogger(__name__)


def unique_rows(A: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Drop exact duplicate rows of the system Ax = b, keeping first-seen order."""
    if A.shape[0] == 0:
        return A, b
    stacked = np.hstack([A, b[:, None]])
    _, index = np.unique(stacked, axis=0, return_index=True)
    index = np.sort(index)
    return A[index], b[index]


def independent_rows(A: np.ndarray, rtol: float = 1e-10) -> Tuple[np.ndarray, int]:
    """
    Indices of a maximal linearly independent subset of the rows of A, found by column-pivoted QR
    of Aᵀ. Returns the sorted indices and the operation count.
    """
    m, n = A.shape
    if m == 0 or n == 0:
        return np.zeros(0, dtype=int), 0
    _, R, perm = qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * max(1.0, float(diag[0]))))
    return np.sort(perm[:rank]), 2 * n * m * min(m, n)


@dataclass
class QpResult:
    x: np.ndarray
    active_lower: np.ndarray
    active_upper: np.ndarray
    eq_multipliers: np.ndarray
    bound_multipliers: np.ndarray
    residual: float
    iterations: int
    ops: int


class QpSolver:
    """
    Solves  min ½xᵀPx + qᵀx  s.t.  Ax = b,  lower ≤ x ≤ upper  for a fixed P and constraint set
    and a sequence of linear terms q.

    Active sets are searched with a primal-dual exchange rule, warm-started from the previous
    solve. KKT factorizations are cached per active set, so repeated solves whose active set has
    settled cost one back-substitution. If the exchange rule cycles or hits its cap, a conic solve
    through cvxpy supplies the active set and the result is polished on the KKT system.
    """

    def __init__(self,
                 P: np.ndarray,
                 A: Optional[np.ndarray] = None,
                 b: Optional[np.ndarray] = None,
                 lower: Optional[np.ndarray] = None,
                 upper: Optional[np.ndarray] = None,
                 tol: float = KKT_TOLERANCE,
                 max_iter: int = INNER_ITERATION_CAP):
        self._logger = logging.getLogger(__name__)

        P = np.asarray(P, dtype=float)
        n = P.shape[0]
        if P.shape != (n, n):
            raise ValueError(f"P must be square, got shape {P.shape}")
        self.P = 0.5 * (P + P.T)
        self.n = n

        if A is None:
            A = np.zeros((0, n))
            b = np.zeros(0)
        A = np.atleast_2d(np.asarray(A, dtype=float)).reshape(-1, n)
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"Equality matrix has {A.shape[0]} rows but right-hand side has {b.shape[0]}")
        self.A, self.b = unique_rows(A, b)

        self.lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float).copy()
        self.upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float).copy()
        if np.any(self.lower > self.upper):
            raise InnerSolverError("empty box", residual=float(np.max(self.lower - self.upper)))

        self.tol = tol
        self.max_iter = max_iter
        self._factors: Dict[Tuple[FrozenSet[int], FrozenSet[int]], tuple] = {}
        self._warm: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def has_bounds(self) -> bool:
        return bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))

    def _factor(self, active_lower: np.ndarray, active_upper: np.ndarray) -> Tuple[tuple, int]:
        key = (frozenset(np.flatnonzero(active_lower).tolist()), frozenset(np.flatnonzero(active_upper).tolist()))
        if key in self._factors:
            return self._factors[key], 0

        free = ~(active_lower | active_upper)
        P_ff = self.P[np.ix_(free, free)]
        rows, ops = independent_rows(self.A[:, free])
        A_f = self.A[np.ix_(rows, free)]
        m = A_f.shape[0]
        size = P_ff.shape[0] + m
        ops += (2 * size ** 3) // 3

        factor: tuple
        if size == 0:
            factor = ("empty", None, rows)
        elif m == 0:
            try:
                factor = ("cho", cho_factor(P_ff), rows)
            except LinAlgError:
                factor = ("lstsq", P_ff, rows)
        else:
            kkt = np.block([[P_ff, A_f.T], [A_f, np.zeros((m, m))]])
            try:
                with warnings.catch_warnings():
                    # singular pivots are detected below
                    warnings.simplefilter("ignore", LinAlgWarning)
                    lu = lu_factor(kkt, check_finite=False)
                pivots = np.abs(np.diag(lu[0]))
                if pivots.size and pivots.min() <= 1e-13 * max(1.0, pivots.max()):
                    raise LinAlgError("singular KKT matrix")
                factor = ("lu", lu, rows)
            except (LinAlgError, ValueError):
                self._logger.debug(f"Singular KKT matrix for an active set of size {int((~free).sum())}")
                factor = ("lstsq", kkt, rows)

        self._factors[key] = factor
        return factor, ops

    def _solve_working(self, q: np.ndarray, active_lower: np.ndarray, active_upper: np.ndarray):
        """Minimize with the active bounds held as equalities. Returns x, ν, bound multipliers, ops."""
        n = self.n
        free = ~(active_lower | active_upper)
        x = np.zeros(n)
        x[active_lower] = self.lower[active_lower]
        x[active_upper] = self.upper[active_upper]

        factor, ops = self._factor(active_lower, active_upper)
        kind, data, rows = factor
        fixed = ~free
        rhs_x = -q[free] - self.P[np.ix_(free, fixed)] @ x[fixed]
        rhs_e = (self.b - self.A[:, fixed] @ x[fixed])[rows]
        m = rows.shape[0]
        size = int(free.sum()) + m
        ops += 2 * size * size

        if kind == "empty":
            sol = np.zeros(0)
        elif kind == "cho":
            sol = cho_solve(data, rhs_x)
        elif kind == "lu":
            sol = lu_solve(data, np.concatenate([rhs_x, rhs_e]), check_finite=False)
        else:
            rhs = rhs_x if m == 0 else np.concatenate([rhs_x, rhs_e])
            sol = lstsq(data, rhs)[0]
            ops += 2 * size ** 3

        n_free = int(free.sum())
        x[free] = sol[:n_free]
        # rows dependent on the kept ones carry a zero multiplier
        nu = np.zeros(self.A.shape[0])
        nu[rows] = sol[n_free:]

        # Lagrangian gradient; on active coordinates it holds the bound multipliers.
        reduced = self.P @ x + q + (self.A.T @ nu if self.A.shape[0] else 0.0)
        mult = np.zeros(n)
        mult[active_lower] = reduced[active_lower]
        mult[active_upper] = -reduced[active_upper]
        return x, nu, mult, reduced, ops

    def kkt_residual(self, x: np.ndarray, q: np.ndarray, reduced: np.ndarray,
                     active_lower: np.ndarray, active_upper: np.ndarray, mult: np.ndarray) -> float:
        free = ~(active_lower | active_upper)
        parts = [0.0]
        if free.any():
            parts.append(float(np.max(np.abs(reduced[free]))))
        if self.A.shape[0]:
            parts.append(float(np.max(np.abs(self.A @ x - self.b))))
        parts.append(float(np.max(np.maximum(self.lower - x, 0.0))))
        parts.append(float(np.max(np.maximum(x - self.upper, 0.0))))
        active = active_lower | active_upper
        if active.any():
            parts.append(float(np.max(np.maximum(-mult[active], 0.0))))
        return max(parts)

    def _scale(self, q: np.ndarray) -> float:
        scale = 1.0 + float(np.max(np.abs(q))) if q.size else 1.0
        if self.b.size:
            scale += float(np.max(np.abs(self.b)))
        return scale

    def solve(self, q: np.ndarray, warm: Optional[QpResult] = None) -> QpResult:
        """
        Solve for one linear term.

        Args:
            q (np.ndarray): Linear term of the objective.
            warm (Optional[QpResult]): Previous result whose active set seeds the search.

        Returns:
            QpResult: Minimizer with active set, multipliers and KKT residual.
        """
        q = np.asarray(q, dtype=float).reshape(self.n)
        if warm is not None:
            active_lower, active_upper = warm.active_lower.copy(), warm.active_upper.copy()
        elif self._warm is not None:
            active_lower, active_upper = self._warm[0].copy(), self._warm[1].copy()
        else:
            active_lower = np.zeros(self.n, dtype=bool)
            active_upper = np.zeros(self.n, dtype=bool)

        result = self._exchange(q, active_lower, active_upper, self.max_iter)
        if result is None:
            self._logger.debug("Active-set exchange did not settle, seeding from a conic solve")
            active_lower, active_upper, conic_ops = self._conic_active_set(q)
            result = self._exchange(q, active_lower, active_upper, self.max_iter, extra_ops=conic_ops)
            if result is None:
                x, nu, mult, reduced, ops = self._solve_working(q, active_lower, active_upper)
                residual = self.kkt_residual(x, q, reduced, active_lower, active_upper, mult)
                raise InnerSolverError("constrained QP did not reach its KKT tolerance", best=x, residual=residual)

        self._warm = (result.active_lower, result.active_upper)
        return result

    def _exchange(self, q, active_lower, active_upper, max_iter, extra_ops: int = 0) -> Optional[QpResult]:
        tol = self.tol * self._scale(q)
        seen = set()
        total_ops = extra_ops
        for it in range(1, max_iter + 1):
            x, nu, mult, reduced, ops = self._solve_working(q, active_lower, active_upper)
            total_ops += ops
            residual = self.kkt_residual(x, q, reduced, active_lower, active_upper, mult)
            if residual <= tol:
                return QpResult(x=x, active_lower=active_lower, active_upper=active_upper,
                                eq_multipliers=nu, bound_multipliers=mult, residual=residual,
                                iterations=it, ops=total_ops)

            free = ~(active_lower | active_upper)
            new_lower = (free & (x < self.lower - tol)) | (active_lower & (mult >= -tol))
            new_upper = (free & (x > self.upper + tol)) | (active_upper & (mult >= -tol))
            # a coordinate with a wrong-signed multiplier is released; keep the sets disjoint
            new_upper &= ~new_lower

            key = (new_lower.tobytes(), new_upper.tobytes())
            if key in seen or (np.array_equal(new_lower, active_lower) and np.array_equal(new_upper, active_upper)):
                logger.debug(f"Active-set exchange stalled after {it} iterations (residual {residual:.3e})")
                return None
            seen.add(key)
            active_lower, active_upper = new_lower, new_upper
        return None

    def _conic_active_set(self, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray, int]:
        x = cp.Variable(self.n)
        objective = cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(self.P)) + q @ x)
        constraints = []
        if self.A.shape[0]:
            constraints.append(self.A @ x == self.b)
        finite_lower = np.isfinite(self.lower)
        finite_upper = np.isfinite(self.upper)
        if finite_lower.any():
            constraints.append(x[finite_lower] >= self.lower[finite_lower])
        if finite_upper.any():
            constraints.append(x[finite_upper] <= self.upper[finite_upper])

        problem = cp.Problem(objective, constraints)
        try:
            problem.solve()
        except cp.error.SolverError as e:
            raise InnerSolverError(f"conic QP solve failed: {e}")
        if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or x.value is None:
            raise InnerSolverError(f"conic QP solve ended with status '{problem.status}'")

        value = np.asarray(x.value)
        span = 1e-6 * (1.0 + np.abs(value))
        active_lower = finite_lower & (value <= self.lower + span)
        active_upper = finite_upper & (value >= self.upper - span) & ~active_lower
        ops = 10 * (self.n + self.A.shape[0]) ** 3
        return active_lower, active_upper, ops
