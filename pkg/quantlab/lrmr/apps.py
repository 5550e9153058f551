from django.apps import AppConfig


class LrmrConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'lrmr'
