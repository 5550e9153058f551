from django.db import models
from django.utils import timezone


class ExperimentRun(models.Model):
    """Registry entry for one harness run and the directory it wrote."""

    KIND_CHOICES = [
        ("error_curve", "Error Curve"),
        ("dither_comparison", "Dither Comparison"),
        ("lasso_vs_ols", "Lasso vs OLS"),
        ("real_data", "Real Data Study"),
        ("calibration", "Lambda Calibration"),
    ]
    STATUS_CHOICES = [
        ("running", "Running"),
        ("finished", "Finished"),
        ("failed", "Failed"),
    ]

    code = models.CharField(max_length=128)
    kind = models.CharField(max_length=32, choices=KIND_CHOICES)
    model = models.CharField(max_length=32)
    schema_version = models.PositiveIntegerField(default=1)
    config = models.JSONField(help_text="Fully resolved experiment configuration.")
    base_seed = models.BigIntegerField(default=0)
    output_dir = models.CharField(max_length=255)
    record_count = models.PositiveIntegerField(default=0)
    failed_count = models.PositiveIntegerField(default=0)
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default="running")
    message = models.TextField(blank=True)
    started_at = models.DateTimeField(default=timezone.now)
    finished_at = models.DateTimeField(null=True, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ["-started_at"]

    def __str__(self) -> str:  # pragma: no cover - simple string repr
        return f"{self.code} ({self.kind}, {self.status})"

    def finish(self, record_count: int, failed_count: int) -> None:
        self.record_count = record_count
        self.failed_count = failed_count
        self.status = "finished"
        self.finished_at = timezone.now()
        self.save(update_fields=["record_count", "failed_count", "status", "finished_at", "updated_at"])

    def fail(self, message: str) -> None:
        self.status = "failed"
        self.message = message
        self.finished_at = timezone.now()
        self.save(update_fields=["status", "message", "finished_at", "updated_at"])
