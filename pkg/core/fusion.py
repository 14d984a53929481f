"""
Conditional estimator: corrects the internal estimate of γ by the regression
of γ̂ on the transformed internal-external discrepancy in θ.

All arithmetic is on the estimate scale. The external covariance arrives as
Cov(θ̂_E) and the internal blocks are the joint sandwich divided by n_I, so no
sample-size ratio appears explicitly.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from . import transform as tr
from .exceptions import SchemaError
from .numerics import as_symmetric, min_eigenvalue, reg_solve
from .sandwich import FittedModel, JointFit

logger = logging.getLogger(__name__)

PSD_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ExternalSummary:
    """Published external estimate θ̂_E with the covariance of the estimate"""
    theta_hat: NDArray[np.float64]
    cov_theta_hat: NDArray[np.float64]
    n_external: int
    family_id: str
    transformation: tr.Transformation = field(default_factory=tr.Transformation.identity)
    x_columns: tuple = ()

    def __post_init__(self):
        theta = np.asarray(self.theta_hat, dtype=np.float64)
        if theta.ndim != 1 or not np.all(np.isfinite(theta)):
            raise SchemaError("theta_hat must be a finite vector", column='THETA')
        cov = as_symmetric(self.cov_theta_hat, 'cov_theta_hat')
        if cov.shape[0] != theta.shape[0]:
            raise SchemaError(
                f"cov_theta_hat is {cov.shape[0]}×{cov.shape[0]} but theta_hat has length {theta.shape[0]}",
                column='COV',
            )
        if min_eigenvalue(cov) < -PSD_TOL * max(1.0, np.max(np.abs(cov))):
            raise SchemaError("cov_theta_hat is not positive semi-definite", column='COV')
        if int(self.n_external) < 1:
            raise SchemaError(f"n_external must be at least 1, got {self.n_external}", column='N')
        object.__setattr__(self, 'theta_hat', theta)
        object.__setattr__(self, 'cov_theta_hat', cov)
        object.__setattr__(self, 'n_external', int(self.n_external))
        object.__setattr__(self, 'x_columns', tuple(self.x_columns))

    @property
    def p(self) -> int:
        return self.theta_hat.shape[0]


@dataclass(frozen=True, eq=False)
class ConditionalResult:
    gamma_internal: NDArray[np.float64]
    gamma_cond: NDArray[np.float64]
    correction_gain: NDArray[np.float64]
    h_diff: NDArray[np.float64]
    cov_cond: NDArray[np.float64]
    cov_internal: NDArray[np.float64]
    sigma_h_theta: NDArray[np.float64]
    sigma_h_cross: NDArray[np.float64]
    theta_internal: NDArray[np.float64]
    theta_external: NDArray[np.float64]
    transformation: tr.Transformation
    ridge_used: bool = False

    @property
    def correction(self) -> NDArray[np.float64]:
        """K·h_diff, the amount subtracted from γ̂_I"""
        return self.gamma_internal - self.gamma_cond

    @property
    def efficiency_gain(self) -> NDArray[np.float64]:
        """cov(γ̂_I) − cov_cond = K·Σ^h_θγ"""
        gain = self.cov_internal - self.cov_cond
        return 0.5 * (gain + gain.T)


def summarize(fitted: FittedModel, transformation: Optional[tr.Transformation] = None,
              x_columns=()) -> ExternalSummary:
    """Package a fitted ψ model as the summary an external study would publish"""
    return ExternalSummary(
        theta_hat=fitted.params.copy(),
        cov_theta_hat=fitted.sigma_estimate.copy(),
        n_external=fitted.n,
        family_id=fitted.family.family_id,
        transformation=transformation or tr.Transformation.identity(),
        x_columns=x_columns,
    )


def conditional_estimate(joint: JointFit, ext: ExternalSummary,
                         t: Optional[tr.Transformation] = None) -> ConditionalResult:
    """
    Conditional estimate γ̂_cond = γ̂_I − Σ^h_γθ (Σ^h_θ)⁻¹ (h(θ̂_I) − h(θ̂_E))

    Args:
        joint: Stacked internal (ψ, φ) fit
        ext: External summary; held fixed
        t: Transformation h; defaults to the one declared by the summary

    Returns:
        ConditionalResult on the estimate scale

    Raises:
        SchemaError: If the families, dimensions or declared transformations disagree
        SingularMatrixError: If Σ^h_θ is singular after the ridge fallback
    """
    t = ext.transformation if t is None else t
    theta_fam = joint.theta_block.family
    if theta_fam.family_id != ext.family_id:
        raise SchemaError(
            f"External summary family {ext.family_id} does not match internal ψ family {theta_fam.family_id}"
        )
    if not t.same_declaration(ext.transformation):
        raise SchemaError(
            f"Transformation mismatch: internal {t.declaration()} vs external {ext.transformation.declaration()}"
        )
    theta_i = joint.theta_block.params
    if theta_i.shape != ext.theta_hat.shape:
        raise SchemaError(f"θ dimension mismatch: internal {theta_i.shape[0]}, external {ext.p}")
    theta_e = ext.theta_hat

    grad_e = tr.gradient(t, theta_e)
    grad_i = tr.gradient(t, theta_i)
    sigma_h_theta = grad_e.T @ ext.cov_theta_hat @ grad_e + grad_i.T @ joint.theta_cov @ grad_i
    sigma_h_theta = 0.5 * (sigma_h_theta + sigma_h_theta.T)
    # q×p′
    sigma_h_gamma_theta = joint.cross_cov.T @ grad_i

    h_diff = tr.apply(t, theta_i) - tr.apply(t, theta_e)
    solution = reg_solve(sigma_h_theta, sigma_h_gamma_theta.T)
    gain = solution.x.T

    gamma_i = joint.gamma_block.params
    gamma_cond = gamma_i - gain @ h_diff
    cov_internal = joint.gamma_cov
    cov_cond = cov_internal - gain @ sigma_h_gamma_theta.T
    cov_cond = 0.5 * (cov_cond + cov_cond.T)

    if solution.fallback:
        logger.warning("Σ^h_θ needed the ridge fallback; efficiency ordering is not certified")

    return ConditionalResult(
        gamma_internal=gamma_i.copy(),
        gamma_cond=gamma_cond,
        correction_gain=gain,
        h_diff=h_diff,
        cov_cond=cov_cond,
        cov_internal=cov_internal,
        sigma_h_theta=sigma_h_theta,
        sigma_h_cross=sigma_h_gamma_theta.T,
        theta_internal=theta_i.copy(),
        theta_external=theta_e.copy(),
        transformation=t,
        ridge_used=joint.ridge_used or solution.fallback,
    )


def secondary_endpoint_closed_form(rho: float, sigma1: float, sigma2: float, n_internal: int,
                                   n_external: int, theta_diff, gamma_internal) -> NDArray[np.float64]:
    """
    Conditional estimate for the bivariate-normal secondary-endpoint model

    γ̂_I + n_E/(n_I + n_E)·ρ·(σ₁/σ₂)·(θ̂_E − θ̂_I); theta_diff is θ̂_E − θ̂_I.

    The sign is flipped relative to the γ̂_I + c/(1 + c)·ρ·(σ₁/σ₂)·(θ̂_I − θ̂_E)
    display, c = n_E/n_I, which has the wrong sign for ρ > 0: the correction
    must follow θ̂_E − θ̂_I. Pass that difference as is and do not negate it.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [-1, 1], got {rho}")
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("sigma1 and sigma2 must be positive")
    if n_internal < 1 or n_external < 1:
        raise ValueError("sample sizes must be positive")
    factor = n_external / (n_internal + n_external)
    return np.asarray(gamma_internal, dtype=np.float64) + factor * rho * sigma1 / sigma2 * np.asarray(
        theta_diff, dtype=np.float64
    )
