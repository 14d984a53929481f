"""
Empirical sandwich covariances for single and stacked estimating equations.

Weighted means are normalized by Σω, so multiplying every observation weight
by a constant leaves Q̂, Ŵ and the per-observation sandwich unchanged.
"""
import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .equations import Dataset, EquationFamily, eval_equation
from .exceptions import SchemaError
from .numerics import min_eigenvalue, sandwich_product
from .zsolve import SolveReport

logger = logging.getLogger(__name__)

PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FittedModel:
    family: EquationFamily
    params: NDArray[np.float64]
    q_hat: NDArray[np.float64]
    w_hat: NDArray[np.float64]
    sigma_per_obs: NDArray[np.float64]
    sigma_estimate: NDArray[np.float64]
    n: int
    scores: NDArray[np.float64]
    weights: NDArray[np.float64]
    ridge_used: bool = False

    @property
    def standard_errors(self) -> NDArray[np.float64]:
        return np.sqrt(np.clip(np.diag(self.sigma_estimate), 0.0, None))


@dataclass(frozen=True, eq=False)
class JointFit:
    theta_block: FittedModel
    gamma_block: FittedModel
    cross_sigma: NDArray[np.float64]
    joint_sigma_estimate: NDArray[np.float64]
    ridge_used: bool = False

    @property
    def n(self) -> int:
        return self.theta_block.n

    @property
    def theta_cov(self) -> NDArray[np.float64]:
        return self.theta_block.sigma_estimate

    @property
    def gamma_cov(self) -> NDArray[np.float64]:
        return self.gamma_block.sigma_estimate

    @property
    def cross_cov(self) -> NDArray[np.float64]:
        """Estimate-scale Cov(θ̂_I, γ̂_I), p×q"""
        return self.cross_sigma / self.n


def _weighted_outer(left: NDArray[np.float64], right: NDArray[np.float64], w: NDArray[np.float64]) -> NDArray[np.float64]:
    return (left * w[:, None]).T @ right / w.sum()


def sandwich_fit(fam: EquationFamily, data: Dataset, solved: SolveReport) -> FittedModel:
    """
    Sandwich covariance of a solved estimating equation

    Args:
        fam: Equation family that was solved
        data: Dataset used for the solve (same obs_weights)
        solved: Converged SolveReport

    Returns:
        FittedModel with Q̂ = Σωᵢ·Jacobianᵢ/Σω, Ŵ = Σωᵢ·sᵢsᵢᵀ/Σω and
        Σ̂ = Q̂⁻¹ŴQ̂⁻ᵀ on both per-observation and estimate scale

    Raises:
        SingularMatrixError: If Q̂ is singular after the ridge fallback
    """
    if not solved.converged:
        raise SchemaError(f"{fam.family_id}: cannot build a sandwich from an unconverged solve")
    evaluated = eval_equation(fam, data, solved.params)
    w = data.weights
    q_hat = np.einsum('n,nij->ij', w, evaluated.jacobians) / w.sum()
    w_hat = _weighted_outer(evaluated.scores, evaluated.scores, w)
    w_hat = 0.5 * (w_hat + w_hat.T)

    if min_eigenvalue(w_hat) < -PSD_TOL * max(1.0, np.max(np.abs(w_hat))):
        logger.warning(f"{fam.family_id}: score outer product is not positive semi-definite")

    sigma, fallback = sandwich_product(q_hat, w_hat)
    return FittedModel(
        family=fam,
        params=np.asarray(solved.params, dtype=np.float64),
        q_hat=q_hat,
        w_hat=w_hat,
        sigma_per_obs=sigma,
        sigma_estimate=sigma / data.n,
        n=data.n,
        scores=evaluated.scores,
        weights=w,
        ridge_used=solved.ridge_used or fallback,
    )


def joint_sandwich(theta_model: FittedModel, gamma_model: FittedModel, data: Dataset) -> JointFit:
    """
    Stacked (ψ, φ) sandwich with a block-diagonal bread

    The diagonal blocks are the individual sandwiches; only the cross block
    Q_θ⁻¹·W_θγ·Q_γ⁻ᵀ is new.

    Raises:
        SchemaError: If the two models were not fit on the same rows and weights
    """
    if not (theta_model.n == gamma_model.n == data.n):
        raise SchemaError(
            f"Row-count mismatch: theta model {theta_model.n}, gamma model {gamma_model.n}, data {data.n}"
        )
    if not np.array_equal(theta_model.weights, gamma_model.weights):
        raise SchemaError("theta and gamma models were fit with different observation weights")

    w = data.weights
    w_cross = _weighted_outer(theta_model.scores, gamma_model.scores, w)
    cross, fallback = sandwich_product(theta_model.q_hat, w_cross, gamma_model.q_hat)

    p = theta_model.params.shape[0]
    joint = np.zeros((p + gamma_model.params.shape[0],) * 2)
    joint[:p, :p] = theta_model.sigma_estimate
    joint[p:, p:] = gamma_model.sigma_estimate
    joint[:p, p:] = cross / data.n
    joint[p:, :p] = joint[:p, p:].T

    return JointFit(
        theta_block=theta_model,
        gamma_block=gamma_model,
        cross_sigma=cross,
        joint_sigma_estimate=joint,
        ridge_used=theta_model.ridge_used or gamma_model.ridge_used or fallback,
    )
