from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# The lab only serves the admin run registry locally; never deploy these values.
SECRET_KEY = os.environ.get(
    "KPG_SECRET_KEY",
    "django-insecure-kpg-local-only-3q7v!m2x0r#w9c1t8b5e6n4z",
)

DEBUG = os.environ.get("KPG_DEBUG", "1") == "1"

ALLOWED_HOSTS = []

# Policy engine settings
POLICY_ENGINE = {
    'RUNS_DIR': BASE_DIR / 'runs',
    'CHECKPOINT_INTERVAL': 500,    # Snapshot + diagnostics every N iterations
    'LOG_INTERVAL': 1,             # Keep s_k in the step record every N iterations
    'KOMP_ERROR_FLOOR': 1e-12,     # Squared errors at or below this are exact redundancy
    'KOMP_CONDITION_LIMIT': 1e12,  # Above this Cholesky solves fall back to pinvh
    'KOMP_REFRESH_INTERVAL': 100,  # Refactor the carried inverse Gram every N iterations
    'HORIZON_CAP_FACTOR': 50,      # T_max = ceil(factor / (1 - gamma))
    'RECORD_RUNS': True,           # Write ExperimentRun rows for each command
}

# Application definition
INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',

    # Third party apps
    'rest_framework',

    # Local apps
    'core',
    'policy_engine',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = "kernelPgLab.urls"

TEMPLATES = [
    {
        "BACKEND": "django.template.backends.django.DjangoTemplates",
        "DIRS": [],
        "APP_DIRS": True,
        "OPTIONS": {
            "context_processors": [
                "django.template.context_processors.debug",
                "django.template.context_processors.request",
                "django.contrib.auth.context_processors.auth",
                "django.contrib.messages.context_processors.messages",
            ],
        },
    },
]

WSGI_APPLICATION = "kernelPgLab.wsgi.application"


# Database
# The run registry; CSV/JSON outputs under each run directory are authoritative.

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "db.sqlite3",
    }
}


# Logging
# KPG_LOG sets the verbosity of the policy engine (DEBUG, INFO, WARNING, ...).

KPG_LOG_LEVEL = os.environ.get('KPG_LOG', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'policy_engine': {
            'handlers': ['console'],
            'level': KPG_LOG_LEVEL,
            'propagate': False,
        },
        'core': {
            'handlers': ['console'],
            'level': KPG_LOG_LEVEL,
            'propagate': False,
        },
    },
}


# Internationalization
# https://docs.djangoproject.com/en/5.1/topics/i18n/

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = True

USE_TZ = True


# Static files (CSS, JavaScript, Images)
# https://docs.djangoproject.com/en/5.1/howto/static-files/

STATIC_URL = "static/"
STATIC_ROOT = os.path.join(BASE_DIR, 'staticfiles')


# Default primary key field type
# https://docs.djangoproject.com/en/5.1/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"
