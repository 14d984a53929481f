import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from .conf import fusion_setting
from .equations import GLM_LOGISTIC, Dataset, EquationFamily, weighted_means
from .exceptions import NonConvergenceError, NumericError
from .numerics import reg_solve

logger = logging.getLogger(__name__)

MAX_HALVINGS = 30

# Fitted probabilities this close to the labels mean the likelihood is monotone.
SEPARATION_TOL = 1e-6


@dataclass(frozen=True)
class SolveReport:
    params: NDArray[np.float64]
    iterations: int
    final_norm: float
    converged: bool
    ridge_used: bool


def _norm(score: NDArray[np.float64]) -> float:
    return float(np.max(np.abs(score))) if score.size else 0.0


def _evaluate(fam: EquationFamily, data: Dataset, params) -> tuple:
    """Mean score, mean Jacobian and max-abs norm; non-finite evaluations count as +inf"""
    try:
        score, jac, _ = weighted_means(fam, data, params)
    except NumericError:
        return None, None, np.inf
    return score, jac, _norm(score)


def _check_separation(fam: EquationFamily, data: Dataset, params, iterations: int) -> None:
    if fam.family_id != GLM_LOGISTIC:
        return

    eta = fam.feature_map.build(data) @ params
    y = data.require(fam.outcome)
    active = data.weights > 0
    if np.all(np.abs(y[active] - expit(eta[active])) < SEPARATION_TOL):
        raise NonConvergenceError(
            "Perfect separation: the logistic likelihood has no finite maximizer",
            best_params=params.copy(), final_norm=None, iterations=iterations,
        )


def solve(fam: EquationFamily, data: Dataset, init=None, tol: Optional[float] = None,
          max_iter: Optional[int] = None) -> SolveReport:
    """
    Damped Newton root-finder for the weighted estimating equations

    The Newton direction solves J̄·step = -ḡ with the weighted mean Jacobian;
    the step is halved (at most 30 times) until the max-abs mean score
    decreases.

    Args:
        fam: Equation family
        data: Dataset; its obs_weights enter every mean
        init: Starting point, zero vector when omitted
        tol: Max-abs mean-score tolerance (FUSION['SOLVER_TOL'] by default)
        max_iter: Newton iteration cap (FUSION['SOLVER_MAX_ITER'] by default)

    Returns:
        SolveReport

    Raises:
        NonConvergenceError: If the iteration cap is reached, or the logistic
            likelihood is monotone (perfect separation)
        SingularMatrixError: If the mean Jacobian is singular after the ridge fallback
    """
    tol = fusion_setting('SOLVER_TOL') if tol is None else tol
    max_iter = fusion_setting('SOLVER_MAX_ITER') if max_iter is None else max_iter
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")

    P = fam.param_dim
    params = np.zeros(P) if init is None else np.array(init, dtype=np.float64)
    if params.shape != (P,) or not np.all(np.isfinite(params)):
        raise NumericError(f"init must be a finite vector of length {P}")

    score, jac, norm = _evaluate(fam, data, params)
    if score is None:
        logger.warning(f"{fam.family_id}: scores overflow at the initial point; restarting from zero")
        params = np.zeros(P)
        score, jac, _ = weighted_means(fam, data, params)
        norm = _norm(score)

    best_params, best_norm = params.copy(), norm
    ridge_used = False
    iterations = 0

    while norm > tol and iterations < max_iter:
        iterations += 1
        step_solution = reg_solve(jac, -score, symmetric=False)
        ridge_used = ridge_used or step_solution.fallback
        step = step_solution.x

        scale = 1.0
        candidate = params + step
        c_score, c_jac, c_norm = _evaluate(fam, data, candidate)
        halvings = 0
        while c_norm >= norm and halvings < MAX_HALVINGS:
            halvings += 1
            scale *= 0.5
            candidate = params + scale * step
            c_score, c_jac, c_norm = _evaluate(fam, data, candidate)

        if c_norm >= norm:
            # no descent along the Newton direction; take it anyway and let the cap decide
            candidate = params + step
            c_score, c_jac, c_norm = _evaluate(fam, data, candidate)
            if c_score is None:
                break

        params, score, jac, norm = candidate, c_score, c_jac, c_norm
        logger.debug(f"{fam.family_id} iteration {iterations}: |score|={norm:.3e} halvings={halvings}")
        if norm < best_norm:
            best_params, best_norm = params.copy(), norm
        _check_separation(fam, data, params, iterations)

    if best_norm > tol:
        _check_separation(fam, data, best_params, iterations)
        raise NonConvergenceError(
            f"{fam.family_id}: no root within {max_iter} iterations (|score|={best_norm:.3e})",
            best_params=best_params, final_norm=best_norm, iterations=iterations,
        )

    if ridge_used:
        logger.warning(f"{fam.family_id}: mean Jacobian needed the ridge fallback")
    return SolveReport(best_params, iterations, best_norm, True, ridge_used)
