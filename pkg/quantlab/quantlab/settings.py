"""
Django settings for quantlab project.

For more information on this file, see
https://docs.djangoproject.com/en/5.2/topics/settings/

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
from dotenv import load_dotenv
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / ".env")


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.getenv(
    "DJANGO_SECRET_KEY",
    'django-insecure-quantlab-local-experiments-only-7f3a9c1e5b2d8046',
)

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = os.getenv("DJANGO_DEBUG", "1") == "1"

ALLOWED_HOSTS = [
    "localhost",
    "127.0.0.1",
]


# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'quantization',
    'lowrank',
    'lrmr',
    'l2rm',
    'synthdata',
    'experiments',
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

ROOT_URLCONF = 'quantlab.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]



# Database
# The run registry (experiments.ExperimentRun) is the only persisted model.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}


LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


STATIC_URL = 'static/'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Experiment directories and worker pool

QUANTLAB_OUTPUT_DIR = Path(os.getenv("QUANTLAB_OUTPUT_DIR", BASE_DIR / "runs"))
QUANTLAB_CONFIG_DIR = Path(os.getenv("QUANTLAB_CONFIG_DIR", BASE_DIR / "configs"))
QUANTLAB_FIXTURES_DIR = Path(
    os.getenv("QUANTLAB_FIXTURES_DIR", BASE_DIR / "synthdata" / "fixtures")
)
# joblib convention: -1 uses every available core.
QUANTLAB_THREADS = int(os.getenv("QUANTLAB_THREADS", "-1"))

# Runs are also recorded in the ExperimentRun table (db.sqlite3), the only write outside --out.
QUANTLAB_REGISTRY = os.getenv("QUANTLAB_REGISTRY", "true").lower() in ("1", "true", "yes")

QUANTLAB_LOG_LEVEL = os.getenv("QUANTLAB_LOG_LEVEL", "INFO")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "plain",
        },
    },
    "loggers": {
        app: {
            "handlers": ["console"],
            "level": QUANTLAB_LOG_LEVEL,
            "propagate": False,
        }
        for app in ("quantization", "lowrank", "lrmr", "l2rm", "synthdata", "experiments")
    },
}
