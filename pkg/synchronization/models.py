from django.db import models


class SimulationRun(models.Model):
    """Audit record for one command run (simulation, sweep, median network, ...)."""

    STATUS_OK = "ok"
    STATUS_BREACH = "breach"
    STATUS_INVALID = "invalid"
    STATUS_CHOICES = (
        (STATUS_OK, "ok"),
        (STATUS_BREACH, "funnel breach"),
        (STATUS_INVALID, "invalid input"),
    )

    command = models.CharField(max_length=32)
    scenario_name = models.CharField(max_length=128, blank=True, default="")
    scenario_digest = models.CharField(max_length=64, blank=True, default="")

    created_at = models.DateTimeField(auto_now_add=True)

    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default=STATUS_OK)
    summary = models.JSONField(default=dict, blank=True)
    output_dir = models.CharField(max_length=512, blank=True, default="")
    message = models.TextField(blank=True, default="")

    class Meta:
        ordering = ('-created_at',)

    def __str__(self):
        label = self.scenario_name or self.scenario_digest[:12] or "-"
        return f"{self.command}:{label} [{self.status}]"
