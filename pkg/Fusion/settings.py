"""
Django settings for the Fusion project.

The project has no web surface and no database: it is driven through
management commands (``fit``, ``fuse``, ``bootstrap_ci``, ``simulate``)
and writes its results as CSV/SVG artifacts.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables from .env file
from dotenv import load_dotenv
load_dotenv(BASE_DIR / 'Fusion' / '.env')


SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'fusion-local-only-not-a-secret')

DEBUG = os.getenv('DJANGO_DEBUG', 'False').lower() in ('1', 'true', 'yes')

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    # Project Apps
    'core',
    'simulation',
]

# No persistence; every run writes CSV artifacts to its output directory.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# ==========================================
# ESTIMATION DEFAULTS
# ==========================================

FUSION = {
    # Z-solver: max-abs weighted mean score and Newton iteration cap
    'SOLVER_TOL': float(os.getenv('FUSION_SOLVER_TOL', '1e-9')),
    'SOLVER_MAX_ITER': int(os.getenv('FUSION_SOLVER_MAX_ITER', '100')),

    # Generalized bootstrap
    'BOOTSTRAP_REPLICATES': int(os.getenv('FUSION_BOOTSTRAP_REPLICATES', '200')),
    'CI_LEVEL': float(os.getenv('FUSION_CI_LEVEL', '0.90')),

    # Share of failed replicates tolerated before a run is declared degenerate
    'FAILURE_THRESHOLD': float(os.getenv('FUSION_FAILURE_THRESHOLD', '0.05')),

    # Threads used for bootstrap and Monte Carlo replicates
    'MAX_WORKERS': int(os.getenv('FUSION_MAX_WORKERS', '1')),

    # Rows in the evaluation draw used for predictive metrics
    'EVAL_ROWS': int(os.getenv('FUSION_EVAL_ROWS', '10000')),
}

# ==========================================
# LOGGING
# ==========================================

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'core': {
            'handlers': ['console'],
            'level': os.getenv('FUSION_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
        'simulation': {
            'handlers': ['console'],
            'level': os.getenv('FUSION_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}
