from django.contrib import admin

from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = (
        "code",
        "kind",
        "model",
        "status",
        "record_count",
        "failed_count",
        "started_at",
        "finished_at",
    )
    list_filter = ("kind", "model", "status", "started_at")
    search_fields = ("code", "output_dir", "message")
    readonly_fields = ("config", "created_at", "updated_at")
