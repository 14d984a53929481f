from django.conf import settings

DEFAULTS = {
    'SOLVER_TOL': 1e-9,
    'SOLVER_MAX_ITER': 100,
    'BOOTSTRAP_REPLICATES': 200,
    'CI_LEVEL': 0.90,
    'FAILURE_THRESHOLD': 0.05,
    'MAX_WORKERS': 1,
    'EVAL_ROWS': 10000,
}


def fusion_setting(key):
    """Read a value from settings.FUSION, falling back to the built-in default"""
    if key not in DEFAULTS:
        raise KeyError(f"Unknown FUSION setting: {key}")
    if not settings.configured:
        return DEFAULTS[key]
    return getattr(settings, 'FUSION', {}).get(key, DEFAULTS[key])
