"""
Django settings for data_valuation project.

The project has no web surface: it is driven through management commands
(``python manage.py value ...``) and keeps no database.
"""

import os
from pathlib import Path

import numpy as np

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('VALUATION_SECRET_KEY', 'data-valuation-batch-tool')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',

    # Third party apps
    'rest_framework',

    # Local apps
    'valuation',
]

# Batch tool, files are the only persistence
DATABASES = {}

# Django REST Framework (serializers + JSON rendering only)
REST_FRAMEWORK = {
    'DEFAULT_RENDERER_CLASSES': [
        'rest_framework.renderers.JSONRenderer',
    ],
    'UNAUTHENTICATED_USER': None,
    'COERCE_DECIMAL_TO_STRING': False,
}

# Valuation engine defaults, read through valuation.conf.valuation_settings
VALUATION = {
    'PROJECTIONS': 100,
    'SW_ORDER': 2,
    'SW_REDUCTION': 'per_slice',
    'ETA': 0.5,
    'GAMMA_GRID': [float(g) for g in np.logspace(-3, 3, 13)],
    'NOISE_GRID': [1e-6, 1e-4, 1e-2, 1e-1],
    'ETA_GRID': [0.1, 0.3, 0.5, 0.7, 0.9],
    'RHO_GRID': [0.5, 1.0],
    'THREADS': None,
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'valuation': {
            'handlers': ['console'],
            'level': os.environ.get('VALUATION_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
