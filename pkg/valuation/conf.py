"""
Engine defaults.

Values come from ``settings.VALUATION`` and fall back to ``DEFAULTS``::

    from valuation.conf import valuation_settings
    valuation_settings.PROJECTIONS
"""

import numpy as np
from django.conf import settings
from rest_framework.settings import APISettings


DEFAULTS = {
    # transport
    'PROJECTIONS': 100,
    'SW_ORDER': 2,
    'SW_REDUCTION': 'per_slice',
    'MDS_MAX_DIM': 8,
    'OTDD_MAX_POINTS': 2000,

    # kernel / gp
    'ETA': 0.5,
    'GAMMA_GRID': [float(g) for g in np.logspace(-3, 3, 13)],
    'NOISE_GRID': [1e-6, 1e-4, 1e-2, 1e-1],
    'ETA_GRID': [0.1, 0.3, 0.5, 0.7, 0.9],
    'RHO_GRID': [0.5, 1.0],
    'JITTER_LADDER': [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6],

    # semivalue / active
    'MAX_EXACT_OWNERS': 14,
    'REFACTOR_EVERY': 16,

    # pipeline
    'THREADS': None,
    'VALIDATION_FRACTION': 0.2,
    'UNCERTAINTY_CHECKPOINTS': 5,
}


class ValuationSettings(APISettings):
    """``APISettings`` bound to ``settings.VALUATION`` instead of ``REST_FRAMEWORK``."""

    @property
    def user_settings(self):
        if not hasattr(self, '_user_settings'):
            self._user_settings = getattr(settings, 'VALUATION', {})
        return self._user_settings


valuation_settings = ValuationSettings(None, DEFAULTS, ())


def reload_valuation_settings(*args, **kwargs):
    if kwargs.get('setting') == 'VALUATION':
        valuation_settings.reload()
