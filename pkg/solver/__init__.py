"""Damped Newton-Raphson with backtracking and a finite-difference Jacobian check."""
import logging
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from data import NewtonConfig, NewtonResult

logger = logging.getLogger(__name__)

ResidualFn = Callable[[np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray], sp.spmatrix]

ARMIJO = 1e-4


class SolverFailure(RuntimeError):
    """Raised when a step cannot be solved; carries the last Newton result."""

    def __init__(self, message: str, result: Optional[NewtonResult] = None):
        super().__init__(message)
        self.result = result


def _inf_norm(r: np.ndarray) -> float:
    return float(np.max(np.abs(r))) if len(r) else 0.0


def _bound_violation(c: np.ndarray) -> float:
    if not len(c):
        return 0.0
    return float(max(0.0, -c.min(), c.max() - 1.0))


class NewtonSolver:
    """Newton-Raphson on a sparse system, keeping the saturation block near [0, 1]."""

    def __init__(self, cfg: Optional[NewtonConfig] = None):
        self.cfg = cfg or NewtonConfig()

    def solve(self, residual: ResidualFn, jacobian: JacobianFn, guess: np.ndarray,
              bounded: slice = slice(0, 0)) -> NewtonResult:
        """
        Solve residual(x) = 0 starting from guess.

        Args:
            residual: Residual function
            jacobian: Sparse Jacobian function
            guess: Initial iterate (previous time level)
            bounded: Slice of x holding the saturation c1

        Returns:
            NewtonResult; converged is False on iteration cap, singular matrix or failed line search
        """
        cfg = self.cfg
        x = np.array(guess, dtype=float)
        r = residual(x)
        norm = _inf_norm(r)
        if not np.isfinite(norm):
            return NewtonResult(x, False, 0, norm, "non-finite residual at the initial guess")

        for it in range(cfg.max_iter + 1):
            violation = _bound_violation(x[bounded])
            if norm <= cfg.tol_residual and violation <= cfg.bound_slack:
                if violation > 0.0:
                    logger.debug(f"projecting a round-off excursion of {violation:.3e} back into [0, 1]")
                x[bounded] = np.clip(x[bounded], 0.0, 1.0)
                return NewtonResult(x, True, it, norm, "converged")
            if it == cfg.max_iter:
                break

            try:
                dx = splu(sp.csc_matrix(jacobian(x)), permc_spec=cfg.ordering).solve(-r)
            except RuntimeError as e:
                return NewtonResult(x, False, it, norm, f"singular Jacobian ({e})")
            if not np.all(np.isfinite(dx)):
                return NewtonResult(x, False, it, norm, "singular Jacobian (non-finite update)")

            s = cfg.damping
            for _ in range(cfg.max_backtracks + 1):
                trial = x + s * dx
                c = trial[bounded]
                if len(c) == 0 or (c.min() >= -cfg.excursion and c.max() <= 1.0 + cfg.excursion):
                    r_trial = residual(trial)
                    n_trial = _inf_norm(r_trial)
                    if np.isfinite(n_trial) and (n_trial <= (1.0 - ARMIJO * s) * norm or n_trial <= cfg.tol_residual):
                        break
                s *= cfg.backtrack_ratio
            else:
                return NewtonResult(x, False, it, norm, "line search failed")

            x, r, norm = trial, r_trial, n_trial
            logger.debug(f"newton iter {it + 1}: residual {norm:.3e}, step {s:.3g}")

        if norm <= cfg.tol_residual:
            message = f"c1 leaves [0, 1] by {_bound_violation(x[bounded]):.3e}"
        else:
            message = f"no convergence after {cfg.max_iter} iterations"
        return NewtonResult(x, False, cfg.max_iter, norm, message)


def newton_step_solve(residual: ResidualFn, jacobian: JacobianFn, guess: np.ndarray,
                      cfg: Optional[NewtonConfig] = None, bounded: slice = slice(0, 0)) -> NewtonResult:
    """Run NewtonSolver once; see NewtonSolver.solve."""
    return NewtonSolver(cfg).solve(residual, jacobian, guess, bounded)


def jacobian_fd_check(residual: ResidualFn, jacobian: JacobianFn, x: np.ndarray, epsilon: float = 1e-6,
                      branches: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> float:
    """
    Compare an analytic Jacobian with central finite differences.

    Columns whose perturbation changes a discrete branch (upwind side,
    extremum location, clipping) are skipped, as the residual is not
    differentiable there.

    Args:
        residual: Residual function
        jacobian: Analytic Jacobian function
        x: Evaluation point
        epsilon: Perturbation size
        branches: Optional function returning the discrete choices at a point

    Returns:
        Maximum of |J_analytic - J_fd| / max(|J_fd|, 1) over compared entries
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    x = np.asarray(x, dtype=float)
    analytic = sp.csc_matrix(jacobian(x)).toarray()
    base = None if branches is None else branches(x)

    error, skipped = 0.0, 0
    for j in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[j] += epsilon
        xm[j] -= epsilon
        if base is not None and not (np.array_equal(branches(xp), base) and np.array_equal(branches(xm), base)):
            skipped += 1
            continue
        fd = (residual(xp) - residual(xm)) / (2.0 * epsilon)
        col = np.abs(analytic[:, j] - fd) / np.maximum(np.abs(fd), 1.0)
        error = max(error, float(col.max()) if len(col) else 0.0)
    if skipped:
        logger.debug(f"jacobian_fd_check skipped {skipped} column(s) at branch switches")
    return error


from solver.driver import TimeStepper, run  # noqa: E402
