from django.contrib import admin

from .models import ExperimentRun, RunCheckpoint


class RunCheckpointInline(admin.TabularInline):
    model = RunCheckpoint
    extra = 0
    readonly_fields = ('iteration', 'model_order', 'value_mean', 'value_stderr', 'alignment', 'snapshot_path')


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('command', 'environment', 'seed', 'status', 'iterations', 'final_model_order', 'started_at')
    list_filter = ('command', 'environment', 'status')
    search_fields = ('config_hash', 'output_dir')
    readonly_fields = ('started_at', 'finished_at')
    inlines = [RunCheckpointInline]


@admin.register(RunCheckpoint)
class RunCheckpointAdmin(admin.ModelAdmin):
    list_display = ('run', 'iteration', 'model_order', 'value_mean', 'value_stderr', 'alignment')
    list_filter = ('run__environment',)
