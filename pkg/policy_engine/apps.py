from django.apps import AppConfig


class PolicyEngineConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "policy_engine"
    verbose_name = "Policy Engine"
