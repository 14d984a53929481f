"""
Monte Carlo studies of the internal, conditional and James-Stein estimators.

Replicate r at offset index i draws everything from
``SeedSequence([base_seed, i, r])``; surrogate runs reuse those seeds at every
correlation level, so comparisons across ρ are paired.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import expit

from core.bootstrap import ESTIMATORS, BootstrapConfig, bootstrap_fuse
from core.conf import fusion_setting
from core.equations import (
    GLM_LOGISTIC, LINEAR, WCLS_CATE, Dataset, EquationFamily, FeatureMap,
)
from core.exceptions import ConfigError, FusionError, ScenarioDegenerateError
from core.fusion import summarize
from core.pipeline import fit_model, fuse
from core.shrinkage import A_PREDICTIVE, A_PREDICTIVE_SUBSET, WeightMatrixSpec
from core.transform import SUBSET, Transformation

from . import laws
from .missing import FusionInputs, fit_predictive_model, missing_covariate_workflow, missing_outcome_workflow
from .reports import RAW_COLUMNS, summarize_replicates

logger = logging.getLogger(__name__)

LINEAR_KIND = 'linear'
LOGISTIC_KIND = 'logistic'
CATE_KIND = 'cate'
SURROGATE_KIND = 'surrogate'
MISSING_OUTCOME_KIND = 'missing_outcome'
MISSING_COVARIATE_KIND = 'missing_covariate'
KINDS = (LINEAR_KIND, LOGISTIC_KIND, CATE_KIND, SURROGATE_KIND, MISSING_OUTCOME_KIND, MISSING_COVARIATE_KIND)
MISSING_KINDS = (MISSING_OUTCOME_KIND, MISSING_COVARIATE_KIND)

DEFAULT_OFFSETS = tuple(round(0.025 * k, 3) for k in range(13))
DEFAULT_RHO_GRID = (0.7, 0.8, 0.9, 1.0)

# (n_internal, n_external) per kind; for missing-data kinds n_external is the
# independent sample the predictive model is trained on
DEFAULT_SIZES = {
    LINEAR_KIND: (200, 20000),
    LOGISTIC_KIND: (500, 20000),
    CATE_KIND: (500, 20000),
    SURROGATE_KIND: (200, 20000),
    MISSING_OUTCOME_KIND: (1000, 1000),
    MISSING_COVARIATE_KIND: (1000, 1000),
}
MIN_SAMPLE = 10


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    n_internal: int
    n_external: int
    offsets: tuple = DEFAULT_OFFSETS
    mc_replicates: int = 200
    base_seed: int = 0
    coefficients: laws.Coefficients = field(default_factory=laws.Coefficients)
    cate: laws.CateCoefficients = field(default_factory=laws.CateCoefficients)
    rho_grid: tuple = DEFAULT_RHO_GRID
    sigma1: float = 2.0
    sigma2: float = 2.0
    missing_rate: float = 0.5
    coverage_replicates: int = 0
    ci_level: float = 0.90
    eval_rows: Optional[int] = None
    workers: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"Unknown scenario {self.kind}. Supported: {', '.join(KINDS)}", field='SCENARIO')
        if min(self.n_internal, self.n_external) < MIN_SAMPLE:
            raise ConfigError(f"Sample sizes must be at least {MIN_SAMPLE}", field='N_INTERNAL')
        if not self.offsets or any(o < 0 for o in self.offsets):
            raise ConfigError("Offsets must be a nonempty list of nonnegative numbers", field='OFFSETS')
        if any(not -1.0 <= r <= 1.0 for r in self.rho_grid):
            raise ConfigError("Every rho must lie in [-1, 1]", field='RHO_GRID')
        if self.mc_replicates < 1:
            raise ConfigError("MC_REPLICATES must be at least 1", field='MC_REPLICATES')
        if not 0.0 < self.missing_rate < 1.0:
            raise ConfigError("MISSING_RATE must lie strictly between 0 and 1", field='MISSING_RATE')
        if self.coverage_replicates < 0:
            raise ConfigError("COVERAGE_REPLICATES must be nonnegative", field='COVERAGE_REPLICATES')
        if min(self.sigma1, self.sigma2) <= 0:
            raise ConfigError("Outcome standard deviations must be positive", field='SCENARIO')
        object.__setattr__(self, 'offsets', tuple(float(o) for o in self.offsets))
        object.__setattr__(self, 'rho_grid', tuple(float(r) for r in self.rho_grid))

    @classmethod
    def defaults(cls, kind: str, **overrides) -> 'ScenarioSpec':
        if kind not in KINDS:
            raise ConfigError(f"Unknown scenario {kind}. Supported: {', '.join(KINDS)}", field='SCENARIO')
        n_internal, n_external = DEFAULT_SIZES[kind]
        values = {'n_internal': n_internal, 'n_external': n_external}
        if kind in MISSING_KINDS:
            values['offsets'] = (0.0,)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(kind, **values)

    def variants(self) -> list:
        """(label, rho) pairs; only the surrogate study has more than one"""
        if self.kind == SURROGATE_KIND:
            return [(f"surrogate(rho={rho:g})", rho) for rho in self.rho_grid]
        return [(self.kind, None)]


@dataclass(frozen=True, eq=False)
class ScenarioReport:
    summary: pd.DataFrame
    raw: pd.DataFrame
    spec: ScenarioSpec


def replicate_seed(base_seed: int, offset_index: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed, offset_index, replicate])


def generate(spec: ScenarioSpec, offset: float, seed, rho: Optional[float] = None) -> tuple:
    """
    Draw one internal and one external study

    The external study uses β_X + offset. Missing-data kinds return the study
    with its indicator and an independent complete sample instead.

    Returns:
        (internal Dataset, external Dataset)
    """
    rng = np.random.default_rng(seed)
    coef = spec.coefficients
    kind = spec.kind

    if kind in (LINEAR_KIND, LOGISTIC_KIND):
        studies = []
        for n, shift in ((spec.n_internal, 0.0), (spec.n_external, offset)):
            cov = laws.draw_covariates(rng, n, coef)
            x, z = laws.regression_design(cov)
            eta = laws.mean_function(cov, coef, shift)
            if kind == LINEAR_KIND:
                y = eta + coef.sigma * rng.standard_normal(n)
            else:
                y = rng.binomial(1, expit(eta)).astype(np.float64)
            studies.append((y, x, z))
        (y_i, x_i, z_i), (y_e, x_e, _) = studies
        internal = Dataset(y=y_i, x=x_i, z=z_i, x_names=laws.REGRESSION_X_NAMES, z_names=laws.REGRESSION_Z_NAMES)
        external = Dataset(y=y_e, x=x_e, x_names=laws.REGRESSION_X_NAMES)
        return internal, external

    if kind == SURROGATE_KIND:
        rho = spec.rho_grid[0] if rho is None else rho
        cov = laws.draw_covariates(rng, spec.n_internal, coef)
        x, z = laws.regression_design(cov)
        mean = laws.mean_function(cov, coef)
        e1, e2 = laws.correlated_errors(rng, spec.n_internal, rho, spec.sigma1, spec.sigma2)
        internal = Dataset(y=mean + e1, y2=mean + e2, x=x, z=z,
                           x_names=laws.REGRESSION_X_NAMES, z_names=laws.REGRESSION_Z_NAMES)
        cov_e = laws.draw_covariates(rng, spec.n_external, coef)
        x_e, _ = laws.regression_design(cov_e)
        _, e2_e = laws.correlated_errors(rng, spec.n_external, rho, spec.sigma1, spec.sigma2)
        y2_e = laws.mean_function(cov_e, coef, offset) + e2_e
        # the external study records only the secondary endpoint
        external = Dataset(y=np.full(spec.n_external, np.nan), y2=y2_e, x=x_e, x_names=laws.REGRESSION_X_NAMES)
        return internal, external

    if kind == CATE_KIND:
        studies = []
        for n, shift in ((spec.n_internal, 0.0), (spec.n_external, offset)):
            cov = laws.draw_covariates(rng, n, coef)
            x, z = laws.cate_design(cov)
            p = laws.assignment_probability(cov, spec.cate)
            a = rng.binomial(1, p).astype(np.float64)
            y = laws.cate_outcome_mean(cov, coef, spec.cate, a, shift) + coef.sigma * rng.standard_normal(n)
            studies.append((y, x, z, a, p, laws.marginal_assignment_probability(cov, spec.cate)))
        y_i, x_i, z_i, a_i, p_i, px_i = studies[0]
        y_e, x_e, _, a_e, _, px_e = studies[1]
        internal = Dataset(y=y_i, x=x_i, z=z_i, a=a_i, propensity=p_i, propensity_x=px_i,
                           x_names=laws.CATE_X_NAMES, z_names=laws.CATE_Z_NAMES)
        external = Dataset(y=y_e, x=x_e, a=a_e, propensity_x=px_e, x_names=laws.CATE_X_NAMES)
        return internal, external

    # missing-data kinds
    cov = laws.draw_covariates(rng, spec.n_internal, coef)
    x, z = laws.regression_design(cov)
    y = laws.mean_function(cov, coef) + coef.sigma * rng.standard_normal(spec.n_internal)
    observed = (rng.random(spec.n_internal) >= spec.missing_rate).astype(np.float64)
    if kind == MISSING_OUTCOME_KIND:
        y = np.where(observed == 1.0, y, np.nan)
    else:
        z = np.where(observed[:, None] == 1.0, z, np.nan)
    internal = Dataset(y=y, x=x, z=z, observed=observed,
                       x_names=laws.REGRESSION_X_NAMES, z_names=laws.REGRESSION_Z_NAMES)

    cov_t = laws.draw_covariates(rng, spec.n_external, coef)
    x_t, z_t = laws.regression_design(cov_t)
    y_t = laws.mean_function(cov_t, coef) + coef.sigma * rng.standard_normal(spec.n_external)
    training = Dataset(y=y_t, x=x_t, z=z_t, x_names=laws.REGRESSION_X_NAMES, z_names=laws.REGRESSION_Z_NAMES)
    return internal, training


def build_inputs(spec: ScenarioSpec, internal: Dataset, external: Dataset) -> FusionInputs:
    """Fit ψ on the external study, summarize it, and declare the internal families"""
    if spec.kind == MISSING_OUTCOME_KIND:
        return missing_outcome_workflow(internal, fit_predictive_model(external))
    if spec.kind == MISSING_COVARIATE_KIND:
        return missing_covariate_workflow(internal)

    x_map = FeatureMap.all_x(internal)
    if spec.kind == CATE_KIND:
        psi = EquationFamily(WCLS_CATE, x_map, x_map, propensity='propensity_x')
        phi = EquationFamily(
            WCLS_CATE,
            FeatureMap.all_x(internal, laws.CATE_CONTROL_Z),
            FeatureMap.all_x(internal, laws.CATE_EFFECT_Z),
            propensity='propensity',
        )
        _, effect = psi.cate_partition
        t = Transformation(SUBSET, effect)
    else:
        family_id = GLM_LOGISTIC if spec.kind == LOGISTIC_KIND else LINEAR
        outcome = 'y2' if spec.kind == SURROGATE_KIND else 'y'
        psi = EquationFamily(family_id, x_map, outcome=outcome)
        phi = EquationFamily(family_id, FeatureMap.x_and_z(internal))
        t = Transformation.identity()

    external_fit = fit_model(psi, external)
    summary = summarize(external_fit, t, x_columns=x_map.names(internal))
    return FusionInputs(internal, summary, psi, phi, t, external_fit)


def weight_matrix_spec(spec: ScenarioSpec, phi: EquationFamily) -> WeightMatrixSpec:
    """Predictive loss: the full design Gram, or the effect block for the CATE study"""
    if spec.kind == CATE_KIND:
        _, effect = phi.cate_partition
        return WeightMatrixSpec(A_PREDICTIVE_SUBSET, effect)
    return WeightMatrixSpec(A_PREDICTIVE)


def truth(spec: ScenarioSpec, phi: EquationFamily) -> np.ndarray:
    """True γ under the internal law; NaN where no closed form exists (CATE control block)"""
    if spec.kind == CATE_KIND:
        control, _ = phi.cate_partition
        return np.concatenate([np.full(len(control), np.nan), laws.cate_truth(spec.cate)])
    if spec.kind == MISSING_OUTCOME_KIND:
        # Y on x alone is misspecified; its projection has no closed form
        return np.full(phi.param_dim, np.nan)
    return laws.regression_truth(spec.coefficients)


def _evaluation_predictions(spec: ScenarioSpec, rng: np.random.Generator, n: int) -> tuple:
    """Design on a fresh internal-law draw and the matching true predictions"""
    cov = laws.draw_covariates(rng, n, spec.coefficients)
    if spec.kind == CATE_KIND:
        x, z = laws.cate_design(cov)
        design = np.hstack([x, z[:, list(laws.CATE_EFFECT_Z)]])
        return design, laws.cate_effect(cov, spec.cate)
    x, z = laws.regression_design(cov)
    if spec.kind == MISSING_OUTCOME_KIND:
        return x, laws.mean_function(cov, spec.coefficients)
    design = np.hstack([x, z])
    target = design @ laws.regression_truth(spec.coefficients)
    if spec.kind == LOGISTIC_KIND:
        target = expit(target)
    return design, target


def _predict(spec: ScenarioSpec, phi: EquationFamily, design: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    if spec.kind == CATE_KIND:
        _, effect = phi.cate_partition
        return design @ gamma[list(effect)]
    eta = design @ gamma
    return expit(eta) if spec.kind == LOGISTIC_KIND else eta


def _coverage(lower, upper, true_gamma, external_mask) -> tuple:
    known = np.isfinite(true_gamma)
    covered = (lower <= true_gamma) & (true_gamma <= upper)

    def share(mask):
        mask = mask & known
        return float(np.mean(covered[mask])) if np.any(mask) else np.nan

    mask = np.asarray(external_mask, dtype=bool)
    return share(np.ones_like(mask)), share(mask), share(~mask)


def run_replicate(spec: ScenarioSpec, offset_index: int, replicate: int, rho: Optional[float] = None) -> list:
    """
    One Monte Carlo replicate: per-estimator rows of PMSE, relative PMSE,
    coverage and the James-Stein weight

    Raises:
        FusionError: Any estimation failure; the caller counts it
    """
    offset = spec.offsets[offset_index]
    seeds = replicate_seed(spec.base_seed, offset_index, replicate).spawn(3)
    internal, external = generate(spec, offset, seeds[0], rho)
    inputs = build_inputs(spec, internal, external)
    a_spec = weight_matrix_spec(spec, inputs.phi)
    result = fuse(inputs.internal, inputs.summary, inputs.psi, inputs.phi, inputs.transformation, a_spec)

    eval_rows = spec.eval_rows or fusion_setting('EVAL_ROWS')
    design, target = _evaluation_predictions(spec, np.random.default_rng(seeds[1]), eval_rows)
    estimates = {
        'internal': result.gamma_internal,
        'conditional': result.gamma_cond,
        'js': result.gamma_js,
    }
    pmse = {
        name: float(np.mean((_predict(spec, inputs.phi, design, gamma) - target) ** 2))
        for name, gamma in estimates.items()
    }

    coverage = {name: (np.nan, np.nan, np.nan) for name in ESTIMATORS}
    if spec.coverage_replicates:
        cfg = BootstrapConfig(
            replicates=spec.coverage_replicates,
            base_seed=int(seeds[2].generate_state(1)[0]),
            ci_level=spec.ci_level,
            workers=1,
        )
        boot = bootstrap_fuse(inputs.internal, inputs.summary, (inputs.psi, inputs.phi),
                              inputs.transformation, a_spec, cfg, base=result)
        true_gamma = truth(spec, inputs.phi)
        mask = inputs.phi.external_mask(inputs.internal)
        coverage = {
            name: _coverage(boot.ci_lower[name], boot.ci_upper[name], true_gamma, mask)
            for name in ESTIMATORS
        }

    return [
        {
            'offset': offset,
            'replicate': replicate,
            'estimator': name,
            'pmse': pmse[name],
            'rel_pmse': pmse[name] / pmse['internal'],
            'coverage_all': coverage[name][0],
            'coverage_external_params': coverage[name][1],
            'coverage_other_params': coverage[name][2],
            'js_weight': result.weight,
        }
        for name in ESTIMATORS
    ]


def run_scenario(spec: ScenarioSpec) -> ScenarioReport:
    """
    Run every (variant, offset, replicate) of a scenario and aggregate

    Returns:
        ScenarioReport with one summary row per (scenario, offset, estimator)
        and one raw row per (replicate, estimator)

    Raises:
        ScenarioDegenerateError: If more than the tolerated share of replicates
            fails at some offset
    """
    tasks = [
        (label, rho, i, r)
        for label, rho in spec.variants()
        for i in range(len(spec.offsets))
        for r in range(spec.mc_replicates)
    ]

    def run_task(task):
        label, rho, i, r = task
        try:
            rows = run_replicate(spec, i, r, rho)
        except (FusionError, np.linalg.LinAlgError, FloatingPointError) as e:
            logger.warning(f"{label} offset {spec.offsets[i]:g} replicate {r} failed: {type(e).__name__}: {e}")
            return label, i, None
        return label, i, rows

    workers = spec.workers or fusion_setting('MAX_WORKERS')
    logger.info(f"Running {spec.kind}: {len(tasks)} replicates on {workers} worker(s)")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run_task, tasks))
    else:
        results = [run_task(task) for task in tasks]

    raw_rows = []
    failures = {}
    for label, i, rows in results:
        if rows is None:
            failures[(label, i)] = failures.get((label, i), 0) + 1
            continue
        raw_rows.extend({'scenario': label, **row} for row in rows)

    threshold = fusion_setting('FAILURE_THRESHOLD')
    for (label, i), n_failed in failures.items():
        if n_failed > threshold * spec.mc_replicates:
            raise ScenarioDegenerateError(
                f"{label} offset {spec.offsets[i]:g}: {n_failed} of {spec.mc_replicates} replicates failed",
                n_failed=n_failed, replicates=spec.mc_replicates,
            )

    raw = pd.DataFrame(raw_rows, columns=RAW_COLUMNS)
    summary = summarize_replicates(raw, spec, failures)
    return ScenarioReport(summary=summary, raw=raw, spec=spec)
