import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .equations import Dataset, predict_design
from .exceptions import SchemaError
from .fusion import ConditionalResult
from .numerics import as_symmetric, inv_sqrt, spectral_norm, sym_inverse
from .sandwich import JointFit
from .transform import IDENTITY

logger = logging.getLogger(__name__)

A_IDENTITY = 'identity'
A_INVERSE_COVARIANCE = 'inverse_covariance'
A_PREDICTIVE = 'predictive'
A_PREDICTIVE_SUBSET = 'predictive_subset'
A_KINDS = (A_IDENTITY, A_INVERSE_COVARIANCE, A_PREDICTIVE, A_PREDICTIVE_SUBSET)

# Run-config loss names
LOSS_ALIASES = {
    'identity': A_IDENTITY,
    'inv_cov': A_INVERSE_COVARIANCE,
    'pmse': A_PREDICTIVE,
    'pmse_subset': A_PREDICTIVE_SUBSET,
}

FALLBACK_NONE = 'none'
FALLBACK_D_LE_2 = 'd_le_2'
FALLBACK_ZERO_DENOMINATOR = 'zero_denominator'


@dataclass(frozen=True)
class WeightMatrixSpec:
    kind: str = A_IDENTITY
    subset: tuple = ()

    def __post_init__(self):
        kind = LOSS_ALIASES.get(self.kind, self.kind)
        if kind not in A_KINDS:
            raise SchemaError(f"Unknown loss weight matrix: {self.kind}")
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'subset', tuple(int(j) for j in self.subset))
        if kind == A_PREDICTIVE_SUBSET and not self.subset:
            raise SchemaError("predictive_subset needs the selected γ coordinates")


@dataclass(frozen=True, eq=False)
class ShrinkageResult:
    gamma_js: NDArray[np.float64]
    weight: float
    tau_star: float
    j_matrix: NDArray[np.float64]
    trace_j: float
    norm_j: float
    d_ratio: float
    denominator: float
    fallback: str
    inv_sqrt_sigma_h_theta: NDArray[np.float64]


def build_A(spec: WeightMatrixSpec, joint: JointFit, data: Dataset) -> NDArray[np.float64]:
    """
    Quadratic-loss weight matrix on the γ coordinates

    Args:
        spec: Which loss to weight by
        joint: Stacked internal fit (γ block supplies q, the φ family and cov(γ̂_I))
        data: Internal data the φ design is built from

    Returns:
        q×q symmetric PSD matrix

    Raises:
        SchemaError: If the subset or design does not fit the γ dimension
        SingularMatrixError: If cov(γ̂_I) is singular for inverse_covariance
    """
    gamma_model = joint.gamma_block
    q = gamma_model.params.shape[0]
    if spec.kind == A_IDENTITY:
        return np.eye(q)
    if spec.kind == A_INVERSE_COVARIANCE:
        inverse, _ = sym_inverse(gamma_model.sigma_per_obs)
        return inverse

    design = predict_design(gamma_model.family, data)
    if design.shape[1] != q:
        raise SchemaError(f"Design has {design.shape[1]} columns but γ has {q} coordinates")
    w = data.weights
    if spec.kind == A_PREDICTIVE:
        gram = (design * w[:, None]).T @ design / w.sum()
        return 0.5 * (gram + gram.T)

    if max(spec.subset) >= q:
        raise SchemaError(f"predictive_subset coordinates {spec.subset} out of range for q = {q}")
    cols = list(spec.subset)
    block = design[:, cols]
    A = np.zeros((q, q))
    A[np.ix_(cols, cols)] = (block * w[:, None]).T @ block / w.sum()
    return 0.5 * (A + A.T)


def _j_matrix(cond: ConditionalResult, A: NDArray[np.float64]) -> tuple:
    S = inv_sqrt(cond.sigma_h_theta)
    cross = cond.sigma_h_cross
    J = S @ cross @ A @ cross.T @ S
    return 0.5 * (J + J.T), S


def _constants(J: NDArray[np.float64]) -> tuple:
    trace_j = float(np.trace(J))
    norm_j = spectral_norm(J)
    tau_star = trace_j - 2.0 * norm_j
    d_ratio = trace_j / norm_j if norm_j > 0 else 0.0
    return trace_j, norm_j, tau_star, d_ratio


def shrinkage_weight(tau_star: float, d_ratio: float, denominator: float) -> tuple:
    """
    Weight on γ̂_cond and the fallback that fired

    The positive-part factor (1 − τ*/denominator)₊ multiplies γ̂_I − γ̂_cond,
    so the weight on γ̂_cond is 1 minus that factor, min(1, τ*/denominator).
    It falls toward 0 as the two estimates separate.
    """
    if not denominator > 0.0:
        return 0.0, FALLBACK_ZERO_DENOMINATOR
    if d_ratio <= 2.0 or tau_star <= 0.0:
        return 0.0, FALLBACK_D_LE_2
    return float(1.0 - max(0.0, 1.0 - tau_star / denominator)), FALLBACK_NONE


def james_stein(cond: ConditionalResult, joint: JointFit, A) -> ShrinkageResult:
    """
    James-Stein combination γ̂_JS = ŵ·γ̂_cond + (1 − ŵ)·γ̂_I

    Ĵ uses the h-scale blocks carried by ``cond`` and the denominator is the
    A-weighted squared distance between γ̂_cond and γ̂_I, both on the estimate
    scale, so sample-size factors cancel. A large distance sends ŵ to 0 and
    γ̂_JS to γ̂_I.

    Args:
        cond: Conditional estimate
        joint: Stacked internal fit the conditional estimate came from
        A: Loss weight matrix (q×q, symmetric PSD)

    Returns:
        ShrinkageResult; a d ≤ 2 or zero-denominator case yields weight 0
    """
    A = as_symmetric(A, 'A')
    q = joint.gamma_block.params.shape[0]
    if A.shape[0] != q:
        raise SchemaError(f"A is {A.shape[0]}×{A.shape[0]} but γ has {q} coordinates")
    J, S = _j_matrix(cond, A)
    trace_j, norm_j, tau_star, d_ratio = _constants(J)

    diff = cond.gamma_cond - cond.gamma_internal
    denominator = float(diff @ A @ diff)
    weight, fallback = shrinkage_weight(tau_star, d_ratio, denominator)
    if fallback != FALLBACK_NONE:
        logger.info(f"James-Stein fallback {fallback} (d={d_ratio:.3f}, tau*={tau_star:.3e})")

    gamma_js = cond.gamma_internal + weight * diff
    return ShrinkageResult(
        gamma_js=gamma_js,
        weight=weight,
        tau_star=tau_star,
        j_matrix=J,
        trace_j=trace_j,
        norm_j=norm_j,
        d_ratio=d_ratio,
        denominator=denominator,
        fallback=fallback,
        inv_sqrt_sigma_h_theta=S,
    )


def weight_from_h_diff(h_diff, base: ShrinkageResult) -> float:
    """
    Weight for an h-scale discrepancy with Ĵ, Σ^h_θ and τ* held at ``base``

    The denominator is (S·h_diff)ᵀ Ĵ (S·h_diff) with S = (Σ^h_θ)^{-1/2}.
    """
    u = base.inv_sqrt_sigma_h_theta @ np.asarray(h_diff, dtype=np.float64)
    denominator = float(u @ base.j_matrix @ u)
    weight, _ = shrinkage_weight(base.tau_star, base.d_ratio, denominator)
    return weight


def weight_from_theta_diff(cond: ConditionalResult, A) -> float:
    """
    James-Stein weight written through the standardized θ difference

    Raises:
        SchemaError: If the conditional estimate used a non-identity transformation
    """
    if cond.transformation.kind != IDENTITY:
        raise SchemaError(
            f"The θ-difference weight needs the identity transformation, got {cond.transformation.kind}"
        )
    A = as_symmetric(A, 'A')
    J, S = _j_matrix(cond, A)
    _, _, tau_star, d_ratio = _constants(J)
    u = S @ (cond.theta_external - cond.theta_internal)
    weight, _ = shrinkage_weight(tau_star, d_ratio, float(u @ J @ u))
    return weight
