from django.apps import AppConfig


class L2rmConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'l2rm'
