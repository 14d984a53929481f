"""
Missing-data workflows: one study split by its missingness indicator into a
pseudo-external part, reduced to a summary, and an internal part.
"""
import logging
from dataclasses import dataclass, replace

import numpy as np

from core.equations import LINEAR, Dataset, EquationFamily, FeatureMap
from core.exceptions import InsufficientDataError, SchemaError
from core.fusion import ExternalSummary, summarize
from core.pipeline import fit_model
from core.sandwich import FittedModel
from core.transform import Transformation

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FusionInputs:
    """Everything conditional_estimate and james_stein need for one study"""
    internal: Dataset
    summary: ExternalSummary
    psi: EquationFamily
    phi: EquationFamily
    transformation: Transformation
    external_fit: FittedModel


def _check_split(part: Dataset, fam: EquationFamily, label: str) -> None:
    if part.n < 2 * fam.param_dim:
        raise InsufficientDataError(
            f"The {label} split has {part.n} rows; at least {2 * fam.param_dim} are needed"
        )


def _split(data: Dataset, fam_external: EquationFamily, fam_internal: EquationFamily) -> tuple:
    observed = data.require('observed').astype(bool)
    external = data.subset(~observed) if np.any(~observed) else None
    internal = data.subset(observed) if np.any(observed) else None
    if external is None:
        raise InsufficientDataError("The external split is empty: no rows are missing")
    if internal is None:
        raise InsufficientDataError("The internal split is empty: every row is missing")
    _check_split(external, fam_external, 'external')
    _check_split(internal, fam_internal, 'internal')
    return external, internal


def _full_design(data: Dataset) -> np.ndarray:
    return data.x if data.z is None else np.hstack([data.x, data.z])


def missing_outcome_workflow(data: Dataset, predictive_model) -> FusionInputs:
    """
    Outcome missing at random given the covariates

    Ỹ is the predictive model applied to all covariates (x then z) and acts
    as a secondary endpoint. Rows with R = 0 give the external summary of
    Ỹ on x; rows with R = 1 give the internal stacked (Ỹ on x, Y on x) fit,
    so γ is the regression of interest and its external analogue is θ.

    Args:
        data: Dataset with ``observed`` (R) and NaN outcomes where R = 0
        predictive_model: Coefficients over the columns of (x, z)

    Returns:
        FusionInputs

    Raises:
        SchemaError: If the predictive model does not match the covariates
        InsufficientDataError: If a split has fewer than 2·p rows
    """
    design = _full_design(data)
    beta = np.asarray(predictive_model, dtype=np.float64)
    if beta.shape != (design.shape[1],):
        raise SchemaError(
            f"Predictive model has {beta.shape[0] if beta.ndim else 0} coefficients, covariates have {design.shape[1]}"
        )
    with_surrogate = replace(data, y2=design @ beta)

    psi = EquationFamily(LINEAR, FeatureMap.all_x(data), outcome='y2')
    phi = EquationFamily(LINEAR, FeatureMap.all_x(data))
    external, internal = _split(with_surrogate, psi, phi)

    t = Transformation.identity()
    external_fit = fit_model(psi, external)
    summary = summarize(external_fit, t, x_columns=psi.feature_map.names(data))
    logger.debug(f"Missing-outcome split: {internal.n} observed, {external.n} missing")
    return FusionInputs(internal, summary, psi, phi, t, external_fit)


def missing_covariate_workflow(data: Dataset) -> FusionInputs:
    """
    Auxiliary covariates Z missing at random given (X, Z)

    Rows without Z give the external summary of Y on x; complete cases give
    the internal stacked (Y on x, Y on x and z) fit.

    Raises:
        InsufficientDataError: If a split has fewer than 2·p rows
    """
    data.require('z')
    psi = EquationFamily(LINEAR, FeatureMap.all_x(data))
    phi = EquationFamily(LINEAR, FeatureMap.x_and_z(data))
    external, internal = _split(data, psi, phi)

    t = Transformation.identity()
    external_fit = fit_model(psi, external)
    summary = summarize(external_fit, t, x_columns=psi.feature_map.names(data))
    logger.debug(f"Missing-covariate split: {internal.n} complete cases, {external.n} without Z")
    return FusionInputs(internal, summary, psi, phi, t, external_fit)


def fit_predictive_model(data: Dataset) -> np.ndarray:
    """Least-squares predictive model of Y on all covariates from an independent sample"""
    fam = EquationFamily(LINEAR, FeatureMap.x_and_z(data))
    return fit_model(fam, data).params
