"""
Covariate and outcome laws of the simulation studies.

Covariates: X1 ~ Exp(1); (X2, X̃3, X4, X5) multivariate normal with unit
variance and pairwise correlation 0.3; X3 = 1(X̃3 > 0.7·X2); Z1 ~ N(0, 1);
Z2 ~ N(α·log X1, 1).
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

NORMAL_CORRELATION = 0.3
X3_THRESHOLD = 0.7
GAUSS_HERMITE_NODES = 40


@dataclass(frozen=True)
class Coefficients:
    beta_c: float = 0.5
    beta_x: float = 0.5
    beta_z: float = 0.2
    beta_xz: float = 0.2
    # mean of Z2 is alpha·log(X1)
    alpha: float = 0.2
    sigma: float = 2.0


@dataclass(frozen=True)
class CateCoefficients:
    assign: tuple = (0.0, 0.3, 0.3)
    tau: tuple = (0.5, 0.2, 0.2, 0.2, 0.2)


class Covariates(NamedTuple):
    x1: NDArray[np.float64]
    x2: NDArray[np.float64]
    x3: NDArray[np.float64]
    x4: NDArray[np.float64]
    x5: NDArray[np.float64]
    z1: NDArray[np.float64]
    z2: NDArray[np.float64]

    @property
    def n(self) -> int:
        return self.x1.shape[0]


# External-model covariates and auxiliary columns of the regression scenarios
REGRESSION_X_NAMES = ('intercept', 'X1', 'X2', 'X4', 'X5')
REGRESSION_Z_NAMES = ('X3', 'Z1', 'Z2', 'X1*X3', 'X2*Z2')

CATE_X_NAMES = ('intercept', 'X1', 'X2', 'X3', 'X4', 'X5')
CATE_Z_NAMES = ('Z1', 'Z2', 'X2*Z2')
# z columns entering the control and effect blocks of the internal CATE model
CATE_CONTROL_Z = (0, 1)
CATE_EFFECT_Z = (0, 2)


def draw_covariates(rng: np.random.Generator, n: int, coef: Coefficients) -> Covariates:
    x1 = rng.exponential(1.0, size=n)
    corr = np.full((4, 4), NORMAL_CORRELATION)
    np.fill_diagonal(corr, 1.0)
    normals = rng.multivariate_normal(np.zeros(4), corr, size=n, method='cholesky')
    x2, x3_latent, x4, x5 = normals.T
    x3 = (x3_latent > X3_THRESHOLD * x2).astype(np.float64)
    z1 = rng.standard_normal(n)
    z2 = coef.alpha * np.log(x1) + rng.standard_normal(n)
    return Covariates(x1, x2, x3, x4, x5, z1, z2)


def regression_design(cov: Covariates) -> tuple:
    """(x, z) blocks of the linear/logistic/surrogate scenarios"""
    x = np.column_stack([np.ones(cov.n), cov.x1, cov.x2, cov.x4, cov.x5])
    z = np.column_stack([cov.x3, cov.z1, cov.z2, cov.x1 * cov.x3, cov.x2 * cov.z2])
    return x, z


def regression_truth(coef: Coefficients) -> NDArray[np.float64]:
    """Coefficients of the full (x, z) design under the internal law"""
    bx, bz = coef.beta_x, coef.beta_z
    return np.array([coef.beta_c, bx, bx, bx, bx, bx, bz, bz, bx, coef.beta_xz])


def mean_function(cov: Covariates, coef: Coefficients, offset: float = 0.0) -> NDArray[np.float64]:
    """β_c + β_X(ΣX_j + X1·X3) + β_Z(Z1 + Z2) + β_XZ·X2·Z2 with β_X shifted by offset"""
    beta_x = coef.beta_x + offset
    x_terms = cov.x1 + cov.x2 + cov.x3 + cov.x4 + cov.x5 + cov.x1 * cov.x3
    return coef.beta_c + beta_x * x_terms + coef.beta_z * (cov.z1 + cov.z2) + coef.beta_xz * cov.x2 * cov.z2


def cate_design(cov: Covariates) -> tuple:
    x = np.column_stack([np.ones(cov.n), cov.x1, cov.x2, cov.x3, cov.x4, cov.x5])
    z = np.column_stack([cov.z1, cov.z2, cov.x2 * cov.z2])
    return x, z


def cate_truth(cate: CateCoefficients) -> NDArray[np.float64]:
    """Effect coefficients on f = (1, X1..X5, Z1, X2·Z2)"""
    t0, t1, t2, t3, t4 = cate.tau
    return np.array([t0, t1, t2, 0.0, 0.0, 0.0, t3, t4])


def cate_effect(cov: Covariates, cate: CateCoefficients) -> NDArray[np.float64]:
    t0, t1, t2, t3, t4 = cate.tau
    return t0 + t1 * cov.x1 + t2 * cov.x2 + t3 * cov.z1 + t4 * cov.x2 * cov.z2


def assignment_probability(cov: Covariates, cate: CateCoefficients) -> NDArray[np.float64]:
    a0, a1, a2 = cate.assign
    return expit(a0 + a1 * cov.x1 + a2 * cov.z1)


def marginal_assignment_probability(cov: Covariates, cate: CateCoefficients) -> NDArray[np.float64]:
    """P(A = 1 | X) with Z1 ~ N(0, 1) integrated out by Gauss-Hermite quadrature"""
    a0, a1, a2 = cate.assign
    nodes, weights = np.polynomial.hermite_e.hermegauss(GAUSS_HERMITE_NODES)
    weights = weights / weights.sum()
    eta = a0 + a1 * cov.x1
    return expit(eta[:, None] + a2 * nodes[None, :]) @ weights


def cate_outcome_mean(cov: Covariates, coef: Coefficients, cate: CateCoefficients, a, offset: float = 0.0):
    """Main effects with β_X shifted by offset, plus A times the conditional effect"""
    beta_x = coef.beta_x + offset
    main = (
        coef.beta_c
        + beta_x * (cov.x1 + cov.x2 + cov.x3 + cov.x4 + cov.x5)
        + coef.beta_z * (cov.z1 + cov.z2)
    )
    return main + a * cate_effect(cov, cate)


def correlated_errors(rng: np.random.Generator, n: int, rho: float, sigma1: float, sigma2: float) -> tuple:
    """
    Bivariate normal errors built from two standard normal streams

    The same streams at different ρ give paired draws.
    """
    u1 = rng.standard_normal(n)
    u2 = rng.standard_normal(n)
    e1 = sigma1 * u1
    e2 = sigma2 * (rho * u1 + np.sqrt(max(0.0, 1.0 - rho ** 2)) * u2)
    return e1, e2
