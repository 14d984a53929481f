import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .equations import Dataset, EquationFamily
from .fusion import ConditionalResult, ExternalSummary, conditional_estimate
from .sandwich import FittedModel, JointFit, joint_sandwich, sandwich_fit
from .shrinkage import ShrinkageResult, WeightMatrixSpec, build_A, james_stein
from .transform import Transformation
from .zsolve import solve

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FusionResult:
    gamma_internal: NDArray[np.float64]
    gamma_cond: NDArray[np.float64]
    gamma_js: NDArray[np.float64]
    weight: float
    tau_star: float
    d_ratio: float
    j_matrix: NDArray[np.float64]
    cov_cond: NDArray[np.float64]
    conditional: ConditionalResult
    shrinkage: ShrinkageResult
    joint: JointFit
    a_matrix: NDArray[np.float64]

    def rows(self, names=None) -> list:
        """One dict per γ coordinate, in the fusion CSV column order"""
        q = self.gamma_internal.shape[0]
        names = names or [str(j) for j in range(q)]
        return [
            {
                'coordinate': names[j],
                'internal': self.gamma_internal[j],
                'conditional': self.gamma_cond[j],
                'js': self.gamma_js[j],
                'weight': self.weight,
                'tau_star': self.tau_star,
                'd_ratio': self.d_ratio,
            }
            for j in range(q)
        ]


def fit_model(fam: EquationFamily, data: Dataset, init=None) -> FittedModel:
    """Solve one estimating equation and attach its sandwich covariance"""
    report = solve(fam, data, init=init)
    logger.debug(f"{fam.family_id} solved in {report.iterations} iterations (|score|={report.final_norm:.2e})")
    return sandwich_fit(fam, data, report)


def fit_joint(psi: EquationFamily, phi: EquationFamily, data: Dataset,
              theta_init=None, gamma_init=None) -> JointFit:
    """
    Fit the internal ψ and φ models on the same rows and stack their sandwiches

    Args:
        psi: External-model family (θ)
        phi: Internal-model family (γ)
        data: Internal study data
        theta_init: Optional starting point for θ
        gamma_init: Optional starting point for γ

    Returns:
        JointFit
    """
    theta_model = fit_model(psi, data, theta_init)
    gamma_model = fit_model(phi, data, gamma_init)
    return joint_sandwich(theta_model, gamma_model, data)


def fuse(data: Dataset, ext: ExternalSummary, psi: EquationFamily, phi: EquationFamily,
         t: Optional[Transformation] = None, a_spec: Optional[WeightMatrixSpec] = None,
         joint: Optional[JointFit] = None) -> FusionResult:
    """
    Internal, conditional and James-Stein estimates of γ

    Args:
        data: Internal study data
        ext: External summary (fixed)
        psi: External-model family fit on the internal data
        phi: Internal-model family
        t: Transformation h; defaults to the summary's declaration
        a_spec: Loss weight matrix; identity when omitted
        joint: A precomputed joint fit to reuse

    Returns:
        FusionResult
    """
    joint = joint or fit_joint(psi, phi, data)
    cond = conditional_estimate(joint, ext, t)
    A = build_A(a_spec or WeightMatrixSpec(), joint, data)
    js = james_stein(cond, joint, A)
    logger.debug(f"Fusion weight {js.weight:.4f} (tau*={js.tau_star:.3e}, d={js.d_ratio:.3f})")
    return FusionResult(
        gamma_internal=cond.gamma_internal,
        gamma_cond=cond.gamma_cond,
        gamma_js=js.gamma_js,
        weight=js.weight,
        tau_star=js.tau_star,
        d_ratio=js.d_ratio,
        j_matrix=js.j_matrix,
        cov_cond=cond.cov_cond,
        conditional=cond,
        shrinkage=js,
        joint=joint,
        a_matrix=A,
    )
