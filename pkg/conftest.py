import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'Fusion.settings')
django.setup()
