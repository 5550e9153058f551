from django.apps import AppConfig


class LowrankConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'lowrank'
