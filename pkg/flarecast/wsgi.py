"""
WSGI config for the flarecast project.

Only the Django admin (catalog and prediction browsing) is served.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'flarecast.settings')

application = get_wsgi_application()
