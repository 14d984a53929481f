"""
CSV ingestion, external-summary files and result writers.

Summary files are KEY=value text read with python-dotenv; floats are written
with 17 significant digits so a round trip reproduces them exactly.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from .equations import Dataset
from .exceptions import SchemaError
from .fusion import ExternalSummary
from .transform import CUSTOM, Transformation

logger = logging.getLogger(__name__)

INTERCEPT_COLUMN = 'intercept'
FLOAT_FORMAT = '.17g'
SUMMARY_KEYS = ('THETA', 'COV', 'N', 'FAMILY', 'TRANSFORM', 'TRANSFORM_INDICES', 'X_COLUMNS')
REQUIRED_SUMMARY_KEYS = ('THETA', 'COV', 'N', 'FAMILY')


@dataclass(frozen=True)
class ColumnRoles:
    """Which CSV columns play which role in a Dataset"""
    outcome: str
    x_columns: tuple = ()
    z_columns: tuple = ()
    outcome2: Optional[str] = None
    intercept: bool = True
    treatment: Optional[str] = None
    propensity: Optional[str] = None
    propensity_x: Optional[str] = None
    missing_indicator: Optional[str] = None

    def declared(self) -> list:
        names = [self.outcome, *self.x_columns, *self.z_columns]
        names += [c for c in (self.outcome2, self.treatment, self.propensity,
                              self.propensity_x, self.missing_indicator) if c]
        return names


def read_table(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"Data file not found: {path}")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise SchemaError(f"Could not parse {path}: {e}")


def _numeric_column(frame: pd.DataFrame, name: str, allow_missing: bool) -> np.ndarray:
    raw = frame[name].str.strip()
    blank = raw.isin(('', 'NA', 'NaN', 'nan'))
    values = pd.to_numeric(raw.mask(blank), errors='coerce')
    bad = values.isna() & ~blank
    if not allow_missing:
        bad = bad | blank
    if bad.any():
        row = int(np.argmax(bad.to_numpy()))
        # header is line 1
        line = row + 2
        raise SchemaError(
            f"Column '{name}' has a non-numeric or missing value '{frame[name].iloc[row]}' at line {line}",
            column=name, line=line,
        )
    return values.to_numpy(dtype=np.float64)


def dataset_from_frame(frame: pd.DataFrame, roles: ColumnRoles) -> Dataset:
    """
    Build a Dataset from string-typed CSV columns

    Raises:
        SchemaError: If a declared column is missing or holds a non-numeric value;
            blank cells are accepted only when a missing indicator is declared
    """
    for name in roles.declared():
        if name not in frame.columns:
            raise SchemaError(f"Declared column '{name}' is not in the CSV header", column=name)

    allow_missing = roles.missing_indicator is not None

    def col(name):
        return None if name is None else _numeric_column(frame, name, allow_missing)

    x_names = list(roles.x_columns)
    x_blocks = [_numeric_column(frame, c, allow_missing) for c in roles.x_columns]
    if roles.intercept:
        x_names.insert(0, INTERCEPT_COLUMN)
        x_blocks.insert(0, np.ones(len(frame)))
    if not x_blocks:
        raise SchemaError("No X columns declared and the intercept is disabled", column='X_COLUMNS')
    z = None
    if roles.z_columns:
        z = np.column_stack([_numeric_column(frame, c, allow_missing) for c in roles.z_columns])

    return Dataset(
        y=_numeric_column(frame, roles.outcome, allow_missing),
        x=np.column_stack(x_blocks),
        z=z,
        a=col(roles.treatment),
        propensity=col(roles.propensity),
        propensity_x=col(roles.propensity_x),
        y2=col(roles.outcome2),
        observed=col(roles.missing_indicator),
        x_names=tuple(x_names),
        z_names=tuple(roles.z_columns),
    )


def load_dataset(path, roles: ColumnRoles) -> Dataset:
    frame = read_table(path)
    data = dataset_from_frame(frame, roles)
    logger.info(f"Loaded {data.n} rows from {path}")
    return data


def _fmt(values) -> str:
    return ','.join(format(float(v), FLOAT_FORMAT) for v in np.ravel(values))


def write_summary(path, summary: ExternalSummary) -> Path:
    """Write an ExternalSummary as KEY=value lines"""
    if summary.transformation.kind == CUSTOM:
        raise SchemaError("A custom transformation cannot be written to a summary file", column='TRANSFORM')
    kind, indices = summary.transformation.declaration()
    lines = [
        f"THETA={_fmt(summary.theta_hat)}",
        f"COV={_fmt(summary.cov_theta_hat)}",
        f"N={summary.n_external}",
        f"FAMILY={summary.family_id}",
        f"TRANSFORM={kind}",
        f"TRANSFORM_INDICES={','.join(str(i) for i in indices)}",
        f'X_COLUMNS="{",".join(summary.x_columns)}"',
    ]
    path = Path(path)
    path.write_text('\n'.join(lines) + '\n')
    logger.info(f"Wrote external summary to {path}")
    return path


def _floats(values: dict, key: str) -> np.ndarray:
    text = values.get(key) or ''
    try:
        return np.array([float(v) for v in text.split(',') if v.strip()], dtype=np.float64)
    except ValueError:
        raise SchemaError(f"Summary key {key} holds a non-numeric entry", column=key)


def _ints(text: Optional[str], key: str) -> tuple:
    try:
        return tuple(int(v) for v in (text or '').split(',') if v.strip())
    except ValueError:
        raise SchemaError(f"Summary key {key} must be a comma-separated integer list", column=key)


def read_summary(path) -> ExternalSummary:
    """
    Read an ExternalSummary written by write_summary

    Raises:
        SchemaError: If a required key is missing or malformed
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"External summary not found: {path}")
    values = dotenv_values(path)
    for key in REQUIRED_SUMMARY_KEYS:
        if not values.get(key):
            raise SchemaError(f"External summary is missing key {key}", column=key)
    unknown = set(values) - set(SUMMARY_KEYS)
    if unknown:
        logger.warning(f"Ignoring unknown summary keys: {', '.join(sorted(unknown))}")

    theta = _floats(values, 'THETA')
    cov = _floats(values, 'COV')
    p = theta.shape[0]
    if cov.shape[0] != p * p:
        raise SchemaError(f"COV has {cov.shape[0]} entries, expected {p * p}", column='COV')
    try:
        n_external = int(values['N'])
    except ValueError:
        raise SchemaError(f"N must be an integer, got {values['N']}", column='N')
    transformation = Transformation(
        values.get('TRANSFORM') or 'identity',
        _ints(values.get('TRANSFORM_INDICES'), 'TRANSFORM_INDICES'),
    )
    x_columns = tuple(c for c in (values.get('X_COLUMNS') or '').split(',') if c)
    return ExternalSummary(
        theta_hat=theta,
        cov_theta_hat=cov.reshape(p, p),
        n_external=n_external,
        family_id=values['FAMILY'],
        transformation=transformation,
        x_columns=x_columns,
    )


def write_rows(path, rows: list, columns: list) -> Path:
    """Write dict rows as CSV with 17-significant-digit floats"""
    path = Path(path)
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, float_format=f"%{FLOAT_FORMAT}", lineterminator='\n')
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path
