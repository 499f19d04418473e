"""
Django settings for the funnelsync project.

The project hosts a single app, ``synchronization``, whose services simulate
funnel-coupled multi-agent networks and whose management commands form the
command-line surface. There is no web front end.
"""
from pathlib import Path

import environ
import os
from datetime import datetime

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Initialize environment variables
env = environ.Env(
    DEBUG=(bool, False),
)
environ.Env.read_env(os.path.join(BASE_DIR, ".env"))

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = env("SECRET_KEY", default="funnelsync-local-only")

DEBUG = env("DEBUG")

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'synchronization',
]

MIDDLEWARE = []

# Database
# Audit rows of command runs; sqlite unless DATABASE_URL says otherwise.

DATABASES = {
    'default': env.db("DATABASE_URL", default=f"sqlite:///{BASE_DIR / 'funnelsync.sqlite3'}"),
}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = "UTC"
USE_TZ = True

USE_I18N = False

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# ── Numerical defaults ───────────────────────────────────────────────────────
# Scenario files and command flags override these per run.

FUNNEL_SYNC = {
    "guard_margin": env.float("FUNNEL_GUARD_MARGIN", default=1e-9),
    "dt_min": env.float("FUNNEL_DT_MIN", default=1e-9),
    "stability_factor": env.float("FUNNEL_STABILITY_FACTOR", default=2.0),
    "bisection_tol": env.float("FUNNEL_BISECTION_TOL", default=1e-12),
    "newton_polish_steps": env.int("FUNNEL_NEWTON_POLISH_STEPS", default=2),
    "drift_check_every": env.int("FUNNEL_DRIFT_CHECK_EVERY", default=100),
    "drift_tolerance": env.float("FUNNEL_DRIFT_TOLERANCE", default=1e-6),
    "validation_samples": env.int("FUNNEL_VALIDATION_SAMPLES", default=41),
    "validation_box": env.float("FUNNEL_VALIDATION_BOX", default=10.0),
    "escape_threshold": env.float("FUNNEL_ESCAPE_THRESHOLD", default=1e12),
    "persist_runs": env.bool("FUNNEL_PERSIST_RUNS", default=True),
}


LOG_DIR = os.path.join(BASE_DIR, "logs")
os.makedirs(LOG_DIR, exist_ok=True)

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,

    'formatters': {
        'verbose': {
            'format': '[{levelname}] {asctime} | {name} | {message}',
            'style': '{',
        },
        'simple': {
            'format': '[{levelname}] {message}',
            'style': '{',
        },
    },

    'handlers': {
        'file': {
            'level': 'DEBUG',
            'class': 'logging.FileHandler',
            'filename': os.path.join(LOG_DIR, f'funnelsync_{datetime.now().date()}.log'),
            'formatter': 'verbose',
        },
        'console': {
            'level': env("FUNNEL_CONSOLE_LOG_LEVEL", default="WARNING"),
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },

    'root': {
        'handlers': ['file', 'console'],
        'level': 'INFO',
    },

    'loggers': {
        'django': {
            'handlers': ['file', 'console'],
            'level': 'WARNING',
            'propagate': False,
        },
        'synchronization': {
            'handlers': ['file', 'console'],
            'level': env("FUNNEL_LOG_LEVEL", default="INFO"),
            'propagate': False,
        },
    },
}
