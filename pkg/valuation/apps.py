from django.apps import AppConfig
import logging


logger = logging.getLogger(__name__)


class ValuationConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'valuation'
    verbose_name = 'Data valuation engine'

    def ready(self):
        # keep valuation_settings in step with override_settings
        from django.core.signals import setting_changed
        from .conf import reload_valuation_settings

        setting_changed.connect(reload_valuation_settings)
        logger.debug("Valuation app ready")
