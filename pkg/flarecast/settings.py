"""
Django settings for the flarecast project.

Pipeline defaults live in the FLARECAST dict at the bottom. Environment
variables override paths only; everything else a run needs comes from its
RunConfig file.
"""

from pathlib import Path
import os
import dotenv

# Load .env file from project directory
ENV_PATH = os.path.join(os.path.dirname(__file__), '..', '.env')
dotenv.load_dotenv(ENV_PATH)
# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'flarecast-insecure-desk-key')

DEBUG = os.environ.get('DJANGO_DEBUG', 'False') == 'True'

ALLOWED_HOSTS = ['localhost', '127.0.0.1']


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'autodiff',
    'network',
    'catalog',
    'attribution',
    'evaluation',
    'pipeline',
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'import_export',
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

ROOT_URLCONF = 'flarecast.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.debug',
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'flarecast.wsgi.application'

PRODUCTION = os.environ.get('PRODUCTION', 'False') == 'True'

# Database

if not PRODUCTION:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': BASE_DIR / 'db.sqlite3',
        }
    }
else:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.postgresql',
            'NAME': os.environ.get('POSTGRES_DATABASE'),
            'USER': os.environ.get('POSTGRES_USERNAME'),
            'PASSWORD': os.environ.get('POSTGRES_PASSWORD'),
            'HOST': os.environ.get('POSTGRES_HOST'),
            'PORT': os.environ.get('POSTGRES_PORT'),
            'CONN_MAX_AGE': 600,
            'OPTIONS': {
                'connect_timeout': 10,
            },
        }
    }


LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

STATIC_URL = 'static/'
STATIC_ROOT = BASE_DIR / 'static'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Flarecast pipeline

DATA_DIR = Path(os.environ.get('FLARECAST_DATA_DIR', BASE_DIR / 'data'))
OUTPUT_DIR = Path(os.environ.get('FLARECAST_OUTPUT_DIR', BASE_DIR / 'runs'))

FLARECAST = {
    'DATA_DIR': DATA_DIR,
    'CACHE_DIR': Path(os.environ.get('FLARECAST_CACHE_DIR', DATA_DIR / 'helioviewer')),
    'OUTPUT_DIR': OUTPUT_DIR,
    'CATALOG': Path(os.environ.get('FLARECAST_CATALOG', DATA_DIR / 'goes_events.csv')),
    'HELIOVIEWER_URL': 'https://api.helioviewer.org/v2/',
    # HMI line-of-sight magnetogram
    'HELIOVIEWER_SOURCE_ID': 19,
    'IMAGE_SIZE': 512,
    'REQUEST_SPACING': 1.0,
    'REQUEST_RETRIES': 3,
    'REQUEST_TIMEOUT': 30,
    'MAX_IN_FLIGHT': 4,
    'DECISION_THRESHOLD': 0.5,
}


# Logging

LOG_LEVEL = os.environ.get('FLARECAST_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '[{asctime}] [{levelname}] {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
        'file': {
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': os.environ.get('FLARECAST_LOG_FILE', str(BASE_DIR / 'flarecast.log')),
            'maxBytes': 5 * 1024 * 1024,
            'backupCount': 3,
            'formatter': 'verbose',
            'delay': True,
        },
    },
    'loggers': {
        name: {
            'handlers': ['console', 'file'],
            'level': LOG_LEVEL,
            'propagate': False,
        }
        for name in ('autodiff', 'network', 'catalog', 'attribution', 'evaluation', 'pipeline')
    },
}


# Celery settings
# Eager by default so every command runs without a broker; point
# CELERY_BROKER_URL at redis and set CELERY_TASK_ALWAYS_EAGER=False to fan out.
CELERY_BROKER_URL = os.environ.get('CELERY_BROKER_URL', 'memory://')
CELERY_RESULT_BACKEND = os.environ.get('CELERY_RESULT_BACKEND', 'cache+memory://')
CELERY_TASK_ALWAYS_EAGER = os.environ.get('CELERY_TASK_ALWAYS_EAGER', 'True') == 'True'
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_TIMEZONE = 'UTC'
