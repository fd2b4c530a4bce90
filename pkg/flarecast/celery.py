import os
from celery import Celery

# Set the default Django settings module
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'flarecast.settings')

app = Celery('flarecast')

# Load configuration from Django settings using namespace 'CELERY'
app.config_from_object('django.conf:settings', namespace='CELERY')

# Picks up pipeline.tasks and attribution.tasks
app.autodiscover_tasks()
