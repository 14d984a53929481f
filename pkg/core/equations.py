"""
Estimating-equation families.

Every family is a sum of rank-structured blocks: for block b the score rows are
s_b(params)·D_b and the per-observation Jacobian rows are D_b ⊗ ∂s_b/∂params.
That keeps the Jacobians analytic and lets the solver form weighted means
without materializing the n×p×p stack.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from .exceptions import NumericError, SchemaError

logger = logging.getLogger(__name__)

LINEAR = 'linear'
GLM_LOGISTIC = 'glm_logistic'
GLM_POISSON = 'glm_poisson'
WCLS_CATE = 'wcls_cate'
LOG_RELATIVE_RISK = 'log_relative_risk'
SURROGATE_STACK = 'surrogate_stack'
CONTROL_ARM = 'control_arm'

FAMILY_IDS = (
    LINEAR, GLM_LOGISTIC, GLM_POISSON, WCLS_CATE,
    LOG_RELATIVE_RISK, SURROGATE_STACK, CONTROL_ARM,
)
TREATMENT_FAMILIES = frozenset({WCLS_CATE, LOG_RELATIVE_RISK})

# Scores affine in the parameters; Newton lands on the root in one step.
AFFINE_FAMILIES = frozenset({LINEAR, SURROGATE_STACK, WCLS_CATE, CONTROL_ARM})

OUTCOME_COLUMNS = ('y', 'y2')
PROPENSITY_COLUMNS = ('propensity', 'propensity_x')

# Linear predictors are clamped here before exponentiation.
ETA_CLAMP = 30.0


def _as_column(values, name: str, n: Optional[int] = None) -> NDArray[np.float64]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise SchemaError(f"Column '{name}' must be one-dimensional", column=name)
    if n is not None and arr.shape[0] != n:
        raise SchemaError(f"Column '{name}' has {arr.shape[0]} rows, expected {n}", column=name)
    arr.setflags(write=False)
    return arr


def _as_matrix(values, name: str, n: int) -> NDArray[np.float64]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != n:
        raise SchemaError(f"Matrix '{name}' must have {n} rows, got shape {arr.shape}", column=name)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Immutable study data: outcomes, the external-model covariates X
    (intercept included), optional auxiliary covariates Z, treatment,
    propensities and observation multipliers.
    """
    y: NDArray[np.float64]
    x: NDArray[np.float64]
    z: Optional[NDArray[np.float64]] = None
    a: Optional[NDArray[np.float64]] = None
    propensity: Optional[NDArray[np.float64]] = None
    propensity_x: Optional[NDArray[np.float64]] = None
    obs_weights: Optional[NDArray[np.float64]] = None
    y2: Optional[NDArray[np.float64]] = None
    observed: Optional[NDArray[np.float64]] = None
    x_names: tuple = ()
    z_names: tuple = ()

    def __post_init__(self):
        y = _as_column(self.y, 'y')
        n = y.shape[0]
        if n < 1:
            raise SchemaError("Dataset has no rows")
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'x', _as_matrix(self.x, 'x', n))
        if self.z is not None:
            object.__setattr__(self, 'z', _as_matrix(self.z, 'z', n))

        for name in ('a', 'propensity', 'propensity_x', 'obs_weights', 'y2', 'observed'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _as_column(value, name, n))

        for name in ('a', 'observed'):
            value = getattr(self, name)
            if value is not None and not np.all(np.isin(value, (0.0, 1.0))):
                raise SchemaError(f"Column '{name}' must be binary (0/1)", column=name)

        for name in PROPENSITY_COLUMNS:
            value = getattr(self, name)
            if value is not None and not np.all((value > 0.0) & (value < 1.0)):
                raise SchemaError(f"Column '{name}' must lie strictly inside (0, 1)", column=name)

        if self.obs_weights is not None:
            w = self.obs_weights
            if not np.all(np.isfinite(w)) or np.any(w < 0) or not np.any(w > 0):
                raise SchemaError(
                    "obs_weights must be finite, nonnegative, with at least one positive entry",
                    column='obs_weights',
                )

        x_names = tuple(self.x_names) or tuple(f"x{j}" for j in range(self.x.shape[1]))
        if len(x_names) != self.x.shape[1]:
            raise SchemaError("x_names does not match the width of x", column='x')
        object.__setattr__(self, 'x_names', x_names)
        if self.z is not None:
            z_names = tuple(self.z_names) or tuple(f"z{j}" for j in range(self.z.shape[1]))
            if len(z_names) != self.z.shape[1]:
                raise SchemaError("z_names does not match the width of z", column='z')
            object.__setattr__(self, 'z_names', z_names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def weights(self) -> NDArray[np.float64]:
        if self.obs_weights is None:
            return np.ones(self.n)
        return self.obs_weights

    def with_weights(self, weights) -> 'Dataset':
        return replace(self, obs_weights=weights)

    def subset(self, mask) -> 'Dataset':
        """Rows selected by a boolean mask or an index array"""
        rows = np.asarray(mask)
        kwargs = {}
        for name in ('y', 'x', 'z', 'a', 'propensity', 'propensity_x', 'obs_weights', 'y2', 'observed'):
            value = getattr(self, name)
            kwargs[name] = None if value is None else value[rows]
        return Dataset(x_names=self.x_names, z_names=self.z_names, **kwargs)

    def require(self, name: str) -> NDArray[np.float64]:
        value = getattr(self, name)
        if value is None:
            raise SchemaError(f"Required column '{name}' is missing from the dataset", column=name)
        return value


@dataclass(frozen=True)
class FeatureMap:
    """Columns of X and Z that form one design block"""
    x_cols: tuple
    z_cols: tuple = ()

    @classmethod
    def all_x(cls, data: Dataset, z_cols=()) -> 'FeatureMap':
        return cls(tuple(range(data.x.shape[1])), tuple(z_cols))

    @classmethod
    def x_and_z(cls, data: Dataset) -> 'FeatureMap':
        z_width = 0 if data.z is None else data.z.shape[1]
        return cls(tuple(range(data.x.shape[1])), tuple(range(z_width)))

    @property
    def width(self) -> int:
        return len(self.x_cols) + len(self.z_cols)

    @property
    def uses_z(self) -> bool:
        return bool(self.z_cols)

    def build(self, data: Dataset) -> NDArray[np.float64]:
        if max(self.x_cols, default=-1) >= data.x.shape[1]:
            raise SchemaError(f"x column index out of range: {self.x_cols}", column='x')
        blocks = [data.x[:, list(self.x_cols)]]
        if self.z_cols:
            z = data.require('z')
            if max(self.z_cols) >= z.shape[1]:
                raise SchemaError(f"z column index out of range: {self.z_cols}", column='z')
            blocks.append(z[:, list(self.z_cols)])
        return np.hstack(blocks)

    def names(self, data: Dataset) -> list:
        out = [data.x_names[j] for j in self.x_cols]
        out += [data.z_names[j] for j in self.z_cols]
        return out

    def from_external(self, data: Dataset) -> list:
        """Per column: True when it comes from the external-model covariates X"""
        return [True] * len(self.x_cols) + [False] * len(self.z_cols)


@dataclass(frozen=True)
class EquationFamily:
    """
    One estimating-equation family ψ or φ.

    For treatment families ``feature_map`` is the control block g and
    ``effect_map`` the effect block f; parameters are ordered (α, γ).
    """
    family_id: str
    feature_map: FeatureMap
    effect_map: Optional[FeatureMap] = None
    outcome: str = 'y'
    propensity: str = 'propensity'

    def __post_init__(self):
        if self.family_id not in FAMILY_IDS:
            raise SchemaError(
                f"Unknown family: {self.family_id}. Supported: {', '.join(FAMILY_IDS)}"
            )
        if self.family_id in TREATMENT_FAMILIES and self.effect_map is None:
            raise SchemaError(f"Family {self.family_id} needs an effect feature map")
        if self.family_id not in TREATMENT_FAMILIES and self.effect_map is not None:
            raise SchemaError(f"Family {self.family_id} takes no effect feature map")
        if self.outcome not in OUTCOME_COLUMNS:
            raise SchemaError(f"outcome must be one of {OUTCOME_COLUMNS}, got {self.outcome}")
        if self.propensity not in PROPENSITY_COLUMNS:
            raise SchemaError(f"propensity must be one of {PROPENSITY_COLUMNS}, got {self.propensity}")

    @property
    def param_dim(self) -> int:
        if self.family_id == SURROGATE_STACK:
            return 2 * self.feature_map.width
        if self.family_id in TREATMENT_FAMILIES:
            return self.feature_map.width + self.effect_map.width
        return self.feature_map.width

    @property
    def uses_z(self) -> bool:
        return self.feature_map.uses_z or (self.effect_map is not None and self.effect_map.uses_z)

    @property
    def is_affine(self) -> bool:
        return self.family_id in AFFINE_FAMILIES

    @property
    def cate_partition(self) -> Optional[tuple]:
        """Index split (α block, effect block) for treatment families"""
        if self.family_id not in TREATMENT_FAMILIES:
            return None
        k = self.feature_map.width
        return tuple(range(k)), tuple(range(k, self.param_dim))

    def coordinate_names(self, data: Dataset) -> list:
        if self.family_id == SURROGATE_STACK:
            names = self.feature_map.names(data)
            return [f"y:{c}" for c in names] + [f"y2:{c}" for c in names]
        if self.family_id in TREATMENT_FAMILIES:
            return (
                [f"control:{c}" for c in self.feature_map.names(data)]
                + [f"effect:{c}" for c in self.effect_map.names(data)]
            )
        return self.feature_map.names(data)

    def external_mask(self, data: Dataset) -> list:
        """Per parameter: True when the coordinate belongs to an X column"""
        if self.family_id == SURROGATE_STACK:
            return self.feature_map.from_external(data) * 2
        if self.family_id in TREATMENT_FAMILIES:
            return self.feature_map.from_external(data) + self.effect_map.from_external(data)
        return self.feature_map.from_external(data)


class EquationEval(NamedTuple):
    scores: NDArray[np.float64]
    jacobians: NDArray[np.float64]
    clamped: NDArray[np.bool_]


@dataclass
class _Block:
    rows: slice
    design: NDArray[np.float64]
    resid: NDArray[np.float64]
    dresid: NDArray[np.float64]


@dataclass
class _Parts:
    blocks: list
    clamped: NDArray[np.bool_] = field(default=None)


def _clamp(eta: NDArray[np.float64]) -> tuple:
    clamped = np.abs(eta) > ETA_CLAMP
    return np.clip(eta, -ETA_CLAMP, ETA_CLAMP), clamped


def _outcome(fam: EquationFamily, data: Dataset) -> NDArray[np.float64]:
    return data.require(fam.outcome)


def _parts(fam: EquationFamily, data: Dataset, params) -> _Parts:
    params = np.asarray(params, dtype=np.float64)
    P = fam.param_dim
    if params.shape != (P,):
        raise SchemaError(f"{fam.family_id} expects {P} parameters, got shape {params.shape}")
    if not np.all(np.isfinite(params)):
        raise NumericError(f"{fam.family_id}: parameters are not finite")
    no_clamp = np.zeros(data.n, dtype=bool)
    fid = fam.family_id

    if fid == LINEAR:
        X = fam.feature_map.build(data)
        y = _outcome(fam, data)
        return _Parts([_Block(slice(0, P), X, y - X @ params, -X)], no_clamp)

    if fid in (GLM_LOGISTIC, GLM_POISSON):
        X = fam.feature_map.build(data)
        y = _outcome(fam, data)
        eta, clamped = _clamp(X @ params)
        if fid == GLM_LOGISTIC:
            mu = expit(eta)
            slope = mu * (1.0 - mu)
        else:
            mu = np.exp(eta)
            slope = mu
        return _Parts([_Block(slice(0, P), X, y - mu, -slope[:, None] * X)], clamped)

    if fid == CONTROL_ARM:
        G = fam.feature_map.build(data)
        y = _outcome(fam, data)
        control = 1.0 - data.require('a')
        return _Parts([_Block(slice(0, P), control[:, None] * G, y - G @ params, -G)], no_clamp)

    if fid == SURROGATE_STACK:
        X = fam.feature_map.build(data)
        k = X.shape[1]
        y1 = data.y
        y2 = data.require('y2')
        zero = np.zeros_like(X)
        first = _Block(slice(0, k), X, y1 - X @ params[:k], np.hstack([-X, zero]))
        second = _Block(slice(k, P), X, y2 - X @ params[k:], np.hstack([zero, -X]))
        return _Parts([first, second], no_clamp)

    # treatment families: parameters (alpha, gamma) over designs (g, f)
    G = fam.feature_map.build(data)
    F = fam.effect_map.build(data)
    k = G.shape[1]
    alpha, gamma = params[:k], params[k:]
    a = data.require('a')
    centered = a - data.require(fam.propensity)
    y = _outcome(fam, data)
    D = np.hstack([G, centered[:, None] * F])

    if fid == WCLS_CATE:
        resid = y - G @ alpha - centered * (F @ gamma)
        return _Parts([_Block(slice(0, P), D, resid, -D)], no_clamp)

    if np.any(y < 0):
        raise SchemaError("log_relative_risk requires a binary or nonnegative outcome", column=fam.outcome)
    eta_base, clamped_base = _clamp(G @ alpha)
    eta_effect, clamped_effect = _clamp(a * (F @ gamma))
    base = np.exp(eta_base)
    tilt = np.exp(-eta_effect)
    resid = tilt * y - base
    dresid = np.hstack([-base[:, None] * G, -(a * tilt * y)[:, None] * F])
    return _Parts([_Block(slice(0, P), D, resid, dresid)], clamped_base | clamped_effect)


def _check_finite_rows(values: NDArray[np.float64], fam: EquationFamily) -> None:
    flat = values.reshape(values.shape[0], -1)
    bad = ~np.all(np.isfinite(flat), axis=1)
    if np.any(bad):
        row = int(np.argmax(bad))
        raise NumericError(f"{fam.family_id}: non-finite score at row {row}", row=row)


def eval_equation(fam: EquationFamily, data: Dataset, params) -> EquationEval:
    """
    Per-observation scores and Jacobians of an estimating-equation family

    Args:
        fam: The equation family
        data: Dataset holding the columns the family needs
        params: Parameter vector of length fam.param_dim

    Returns:
        EquationEval(scores n×P, jacobians n×P×P, clamped rows)

    Raises:
        SchemaError: If a required column is missing
        NumericError: If a score is not finite (row index attached)
    """
    parts = _parts(fam, data, params)
    P = fam.param_dim
    scores = np.zeros((data.n, P))
    jac = np.zeros((data.n, P, P))
    for block in parts.blocks:
        scores[:, block.rows] = block.resid[:, None] * block.design
        jac[:, block.rows, :] = block.design[:, :, None] * block.dresid[:, None, :]
    _check_finite_rows(scores, fam)
    _check_finite_rows(jac, fam)
    if np.any(parts.clamped):
        logger.warning(f"{fam.family_id}: {int(parts.clamped.sum())} rows hit the linear-predictor clamp")
    return EquationEval(scores, jac, parts.clamped)


def weighted_means(fam: EquationFamily, data: Dataset, params) -> tuple:
    """
    Weighted mean score and weighted mean Jacobian, normalized by Σω

    Returns:
        (mean score P-vector, mean Jacobian P×P, number of clamped rows)
    """
    parts = _parts(fam, data, params)
    w = data.weights
    total = w.sum()
    P = fam.param_dim
    score = np.zeros(P)
    jac = np.zeros((P, P))
    for block in parts.blocks:
        wr = w * block.resid
        score[block.rows] = block.design.T @ wr / total
        jac[block.rows, :] = (block.design * w[:, None]).T @ block.dresid / total
    if not (np.all(np.isfinite(score)) and np.all(np.isfinite(jac))):
        rows = parts.blocks[0].resid
        bad = ~np.isfinite(rows)
        row = int(np.argmax(bad)) if np.any(bad) else None
        raise NumericError(f"{fam.family_id}: non-finite weighted mean score", row=row)
    return score, jac, int(np.count_nonzero(parts.clamped))


def predict_design(fam: EquationFamily, data: Dataset, effect_only: bool = False) -> NDArray[np.float64]:
    """
    Regression design H whose columns align with the family parameters

    Treatment families return (g, f); with ``effect_only`` only f, the
    columns that predict the conditional treatment effect.
    """
    if effect_only:
        if fam.family_id not in TREATMENT_FAMILIES:
            raise SchemaError(f"{fam.family_id} has no treatment-effect block")
        return fam.effect_map.build(data)
    if fam.family_id in TREATMENT_FAMILIES:
        return np.hstack([fam.feature_map.build(data), fam.effect_map.build(data)])
    return fam.feature_map.build(data)


def fit_propensity(data: Dataset, feature_map: FeatureMap, target: str = 'propensity',
                   clip: float = 1e-6) -> Dataset:
    """
    Plug-in logistic propensity model of the treatment on one design block

    Args:
        data: Dataset with a treatment column
        feature_map: Columns used as predictors of treatment
        target: Which propensity column to fill ('propensity' or 'propensity_x')
        clip: Fitted probabilities are kept inside [clip, 1 - clip]

    Returns:
        A copy of data with the fitted propensity column
    """
    from .zsolve import solve

    if target not in PROPENSITY_COLUMNS:
        raise SchemaError(f"target must be one of {PROPENSITY_COLUMNS}, got {target}")
    a = data.require('a')
    design = feature_map.build(data)
    treatment_data = Dataset(y=a, x=design, obs_weights=data.obs_weights)
    fam = EquationFamily(GLM_LOGISTIC, FeatureMap(tuple(range(design.shape[1]))))
    report = solve(fam, treatment_data)
    fitted = np.clip(expit(design @ report.params), clip, 1.0 - clip)
    logger.info(f"Fitted propensity model on {design.shape[1]} features in {report.iterations} iterations")
    return replace(data, **{target: fitted})
