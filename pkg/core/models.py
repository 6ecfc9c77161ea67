from django.db import models
from django.utils import timezone


class ExperimentRun(models.Model):
    """One invocation of a `kpg` subcommand and where its outputs live."""
    STATUS_RUNNING = 'running'
    STATUS_COMPLETED = 'completed'
    STATUS_FAILED = 'failed'
    STATUS_CHOICES = [
        (STATUS_RUNNING, 'Running'),
        (STATUS_COMPLETED, 'Completed'),
        (STATUS_FAILED, 'Failed'),
    ]

    command = models.CharField(max_length=32)
    environment = models.CharField(max_length=64)
    config_hash = models.CharField(max_length=64, db_index=True)
    seed = models.BigIntegerField(default=0)
    output_dir = models.CharField(max_length=512)
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default=STATUS_RUNNING)
    iterations = models.PositiveIntegerField(default=0)
    final_model_order = models.PositiveIntegerField(null=True, blank=True)
    summary = models.JSONField(default=dict, blank=True)
    started_at = models.DateTimeField(default=timezone.now)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']
        indexes = [
            models.Index(fields=['environment', 'status'], name='core_run_env_status_idx'),
        ]

    def __str__(self):
        return f"{self.command} {self.environment} seed={self.seed} ({self.status})"

    @classmethod
    def start(cls, command, environment, config_hash, seed, output_dir, iterations=0):
        """
        Register a run that is about to start.

        Returns:
            The created ExperimentRun instance
        """
        return cls.objects.create(
            command=command,
            environment=environment,
            config_hash=config_hash,
            seed=seed,
            output_dir=output_dir,
            iterations=iterations,
        )

    def finish(self, status, final_model_order=None, **summary):
        self.status = status
        self.final_model_order = final_model_order
        if summary:
            self.summary = summary
        self.finished_at = timezone.now()
        self.save(update_fields=['status', 'final_model_order', 'summary', 'finished_at'])
        return self


class RunCheckpoint(models.Model):
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='checkpoints')
    iteration = models.PositiveIntegerField()
    model_order = models.PositiveIntegerField()
    value_mean = models.FloatField(null=True, blank=True)
    value_stderr = models.FloatField(null=True, blank=True)
    alignment = models.FloatField(null=True, blank=True)
    snapshot_path = models.CharField(max_length=512, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['run', 'iteration']
        unique_together = ('run', 'iteration')

    def __str__(self):
        return f"Run {self.run_id} k={self.iteration} M={self.model_order}"
