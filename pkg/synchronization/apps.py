from django.apps import AppConfig


class SynchronizationConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'synchronization'
    verbose_name = 'Funnel-coupled synchronization'
