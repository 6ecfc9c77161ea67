import django.db.models.deletion
import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("command", models.CharField(max_length=32)),
                ("environment", models.CharField(max_length=64)),
                ("config_hash", models.CharField(db_index=True, max_length=64)),
                ("seed", models.BigIntegerField(default=0)),
                ("output_dir", models.CharField(max_length=512)),
                ("status", models.CharField(
                    choices=[("running", "Running"), ("completed", "Completed"), ("failed", "Failed")],
                    default="running", max_length=16)),
                ("iterations", models.PositiveIntegerField(default=0)),
                ("final_model_order", models.PositiveIntegerField(blank=True, null=True)),
                ("summary", models.JSONField(blank=True, default=dict)),
                ("started_at", models.DateTimeField(default=django.utils.timezone.now)),
                ("finished_at", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "ordering": ["-started_at"],
                "indexes": [models.Index(fields=["environment", "status"], name="core_run_env_status_idx")],
            },
        ),
        migrations.CreateModel(
            name="RunCheckpoint",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("iteration", models.PositiveIntegerField()),
                ("model_order", models.PositiveIntegerField()),
                ("value_mean", models.FloatField(blank=True, null=True)),
                ("value_stderr", models.FloatField(blank=True, null=True)),
                ("alignment", models.FloatField(blank=True, null=True)),
                ("snapshot_path", models.CharField(blank=True, max_length=512)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("run", models.ForeignKey(on_delete=django.db.models.deletion.CASCADE,
                                          related_name="checkpoints", to="core.experimentrun")),
            ],
            options={
                "ordering": ["run", "iteration"],
                "unique_together": {("run", "iteration")},
            },
        ),
    ]
