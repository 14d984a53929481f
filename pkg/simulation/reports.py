import logging
from pathlib import Path

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from core.bootstrap import ESTIMATORS  # noqa: E402
from core.datafiles import FLOAT_FORMAT  # noqa: E402

logger = logging.getLogger(__name__)

RAW_COLUMNS = [
    'scenario', 'offset', 'replicate', 'estimator', 'pmse', 'rel_pmse', 'coverage_all',
    'coverage_external_params', 'coverage_other_params', 'js_weight',
]
SUMMARY_COLUMNS = [
    'scenario', 'offset', 'estimator', 'rel_pmse_mean', 'rel_pmse_se', 'coverage_all',
    'coverage_external_params', 'coverage_other_params', 'mean_js_weight', 'n_failed',
]
COVERAGE_COLUMNS = ['coverage_all', 'coverage_external_params', 'coverage_other_params']

REPORT_FILE = 'scenario_report.csv'
REPLICATES_FILE = 'scenario_replicates.csv'
FIGURE_FILE = 'scenario_report.svg'

# Fixed so repeated runs write byte-identical SVG
SVG_HASH_SALT = 'fusion-scenarios'

ESTIMATOR_LABELS = {'internal': 'Internal only', 'conditional': 'Conditional', 'js': 'James-Stein'}


def _mean_or_nan(values: pd.Series) -> float:
    values = values.dropna()
    return float(values.mean()) if len(values) else np.nan


def summarize_replicates(raw: pd.DataFrame, spec, failures: dict) -> pd.DataFrame:
    """
    One row per (scenario, offset, estimator) in run order

    Args:
        raw: Per-replicate rows (RAW_COLUMNS)
        spec: The ScenarioSpec that produced them
        failures: Failed-replicate counts keyed by (scenario label, offset index)

    Returns:
        DataFrame with SUMMARY_COLUMNS
    """
    groups = {key: frame for key, frame in raw.groupby(['scenario', 'offset', 'estimator'], sort=False)}
    rows = []
    for label, _ in spec.variants():
        for i, offset in enumerate(spec.offsets):
            for estimator in ESTIMATORS:
                frame = groups.get((label, offset, estimator))
                row = {'scenario': label, 'offset': offset, 'estimator': estimator,
                       'n_failed': failures.get((label, i), 0)}
                if frame is None or frame.empty:
                    row.update({c: np.nan for c in SUMMARY_COLUMNS if c not in row})
                else:
                    m = len(frame)
                    rel = frame['rel_pmse']
                    row['rel_pmse_mean'] = float(rel.mean())
                    row['rel_pmse_se'] = float(rel.std(ddof=1) / np.sqrt(m)) if m > 1 else np.nan
                    for column in COVERAGE_COLUMNS:
                        row[column] = _mean_or_nan(frame[column])
                    row['mean_js_weight'] = float(frame['js_weight'].mean())
                rows.append(row)
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def plot_report(summary: pd.DataFrame, path) -> Path:
    """Relative PMSE and mean coverage against the heterogeneity offset"""
    plt.rcParams['svg.hashsalt'] = SVG_HASH_SALT
    has_coverage = summary['coverage_all'].notna().any()
    fig, axes = plt.subplots(1, 2 if has_coverage else 1, figsize=(11 if has_coverage else 6, 4), squeeze=False)
    pmse_ax = axes[0][0]
    for (label, estimator), frame in summary.groupby(['scenario', 'estimator'], sort=False):
        name = ESTIMATOR_LABELS.get(estimator, estimator)
        if summary['scenario'].nunique() > 1:
            name = f"{name} · {label}"
        pmse_ax.plot(frame['offset'], frame['rel_pmse_mean'], marker='o', markersize=3, label=name)
    pmse_ax.axhline(1.0, color='grey', linewidth=0.8, linestyle='--')
    pmse_ax.set_xlabel('Offset')
    pmse_ax.set_ylabel('Relative PMSE')
    pmse_ax.legend(fontsize='small')

    if has_coverage:
        cov_ax = axes[0][1]
        for estimator, frame in summary.groupby('estimator', sort=False):
            for column, style in zip(COVERAGE_COLUMNS, ('-', '--', ':')):
                cov_ax.plot(frame['offset'], frame[column], linestyle=style,
                            label=f"{ESTIMATOR_LABELS.get(estimator, estimator)} ({column.replace('coverage_', '')})")
        cov_ax.set_xlabel('Offset')
        cov_ax.set_ylabel('Mean coverage')
        cov_ax.legend(fontsize='x-small')

    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    return path


def write_report(report, out_dir, plots: bool = False) -> list:
    """Write the summary and per-replicate CSVs, plus the SVG figure when asked"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_options = {'index': False, 'float_format': f"%{FLOAT_FORMAT}", 'lineterminator': '\n'}
    written = [out / REPORT_FILE, out / REPLICATES_FILE]
    report.summary.to_csv(written[0], **csv_options)
    report.raw.to_csv(written[1], **csv_options)
    if plots:
        written.append(plot_report(report.summary, out / FIGURE_FILE))
    logger.info(f"Wrote {', '.join(p.name for p in written)} to {out}")
    return written
