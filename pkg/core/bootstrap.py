"""
Generalized (multiplier) bootstrap of the internal, conditional and
James-Stein estimators with the external summary held fixed.

Replicate k draws its Exp(1) multipliers from ``default_rng(base_seed + k)``,
so the draws do not depend on thread count or completion order.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .conf import fusion_setting
from .equations import Dataset, EquationFamily
from .exceptions import BootstrapDegenerateError, FusionError
from .fusion import ExternalSummary, conditional_estimate
from .pipeline import FusionResult, fit_joint, fuse
from .shrinkage import WeightMatrixSpec, weight_from_h_diff
from .transform import Transformation, apply

logger = logging.getLogger(__name__)

ESTIMATORS = ('internal', 'conditional', 'js')


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = field(default_factory=lambda: fusion_setting('BOOTSTRAP_REPLICATES'))
    base_seed: int = 0
    ci_level: float = field(default_factory=lambda: fusion_setting('CI_LEVEL'))
    workers: Optional[int] = None
    # Test hook: every multiplier is 1, so each replicate reproduces the base fit.
    force_unit_weights: bool = False

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError(f"replicates must be at least 1, got {self.replicates}")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError(f"ci_level must lie in (0, 1), got {self.ci_level}")
        if self.base_seed < 0:
            raise ValueError(f"base_seed must be nonnegative, got {self.base_seed}")


@dataclass(frozen=True, eq=False)
class BootstrapOutput:
    draws: dict
    weights_js: NDArray[np.float64]
    ci_lower: dict
    ci_upper: dict
    failed: NDArray[np.bool_]
    base: FusionResult
    ci_level: float = field(default=0.90)

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum())

    def point(self, estimator: str) -> NDArray[np.float64]:
        return {
            'internal': self.base.gamma_internal,
            'conditional': self.base.gamma_cond,
            'js': self.base.gamma_js,
        }[estimator]

    def rows(self, names=None) -> list:
        """CSV rows: estimator, coordinate, point, lower, upper, n_failed"""
        out = []
        for estimator in ESTIMATORS:
            point = self.point(estimator)
            labels = names or [str(j) for j in range(point.shape[0])]
            for j in range(point.shape[0]):
                out.append({
                    'estimator': estimator,
                    'coordinate': labels[j],
                    'point': point[j],
                    'lower': self.ci_lower[estimator][j],
                    'upper': self.ci_upper[estimator][j],
                    'n_failed': self.n_failed,
                })
        return out


def draw_multipliers(n: int, seed: int) -> NDArray[np.float64]:
    """i.i.d. unit-mean exponential observation multipliers"""
    return np.random.default_rng(seed).exponential(1.0, size=n)


def percentile_interval(draws: NDArray[np.float64], ci_level: float) -> tuple:
    """Per-column percentile bounds at (1 ∓ ci_level)/2, failed rows (NaN) ignored"""
    alpha = (1.0 - ci_level) / 2.0
    lower = np.nanquantile(draws, alpha, axis=0, method='linear')
    upper = np.nanquantile(draws, 1.0 - alpha, axis=0, method='linear')
    return lower, upper


def bootstrap_fuse(data: Dataset, ext: ExternalSummary, families: tuple, t: Optional[Transformation],
                   a_spec: Optional[WeightMatrixSpec], cfg: BootstrapConfig,
                   base: Optional[FusionResult] = None) -> BootstrapOutput:
    """
    Multiplier bootstrap of the three estimators of γ

    Each replicate re-solves the stacked internal equations under Exp(1)
    weights, starting from the base estimates, and recomputes the
    conditional estimate against the same external summary. Its James-Stein
    weight keeps Ĵ, Σ^h_θ and τ* from the unweighted fit and only the
    replicate discrepancy h(θ̂_I^(k)) − h(θ̂_E) varies.

    Args:
        data: Internal study data
        ext: External summary (fixed)
        families: (ψ family, φ family)
        t: Transformation h; defaults to the summary's declaration
        a_spec: Loss weight matrix spec
        cfg: Bootstrap configuration
        base: A precomputed unweighted fusion result to reuse

    Returns:
        BootstrapOutput with replicate draws in replicate-index order

    Raises:
        BootstrapDegenerateError: If more than the tolerated share of replicates fail
    """
    psi, phi = families
    t = ext.transformation if t is None else t
    base = base or fuse(data, ext, psi, phi, t, a_spec)
    theta0 = base.joint.theta_block.params
    gamma0 = base.joint.gamma_block.params
    h_external = apply(t, ext.theta_hat)
    q = gamma0.shape[0]

    def replicate(k: int):
        if cfg.force_unit_weights:
            multipliers = np.ones(data.n)
        else:
            multipliers = draw_multipliers(data.n, cfg.base_seed + k)
        weighted = data.with_weights(data.weights * multipliers)
        try:
            joint = fit_joint(psi, phi, weighted, theta_init=theta0, gamma_init=gamma0)
            cond = conditional_estimate(joint, ext, t)
            h_diff = apply(t, joint.theta_block.params) - h_external
            weight = weight_from_h_diff(h_diff, base.shrinkage)
        except (FusionError, np.linalg.LinAlgError, FloatingPointError) as e:
            logger.warning(f"Bootstrap replicate {k} failed: {type(e).__name__}: {e}")
            return None
        js = cond.gamma_internal + weight * (cond.gamma_cond - cond.gamma_internal)
        return cond.gamma_internal, cond.gamma_cond, js, weight

    workers = cfg.workers or fusion_setting('MAX_WORKERS')
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(replicate, range(cfg.replicates)))
    else:
        results = [replicate(k) for k in range(cfg.replicates)]

    draws = {name: np.full((cfg.replicates, q), np.nan) for name in ESTIMATORS}
    weights_js = np.full(cfg.replicates, np.nan)
    failed = np.zeros(cfg.replicates, dtype=bool)
    for k, result in enumerate(results):
        if result is None:
            failed[k] = True
            continue
        draws['internal'][k], draws['conditional'][k], draws['js'][k], weights_js[k] = result

    n_failed = int(failed.sum())
    threshold = fusion_setting('FAILURE_THRESHOLD')
    if n_failed > threshold * cfg.replicates:
        raise BootstrapDegenerateError(
            f"{n_failed} of {cfg.replicates} bootstrap replicates failed",
            n_failed=n_failed, replicates=cfg.replicates,
        )
    if n_failed:
        logger.warning(f"{n_failed} of {cfg.replicates} bootstrap replicates excluded")

    ci_lower, ci_upper = {}, {}
    for name in ESTIMATORS:
        ci_lower[name], ci_upper[name] = percentile_interval(draws[name], cfg.ci_level)

    logger.info(f"Bootstrap finished: {cfg.replicates} replicates, {n_failed} failed")
    return BootstrapOutput(
        draws=draws,
        weights_js=weights_js,
        ci_lower=ci_lower,
        ci_upper=ci_upper,
        failed=failed,
        base=base,
        ci_level=cfg.ci_level,
    )
