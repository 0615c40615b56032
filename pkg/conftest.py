import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'data_valuation.settings')
django.setup()
