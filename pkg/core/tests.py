from django.db import IntegrityError
from django.test import TestCase

from .models import ExperimentRun, RunCheckpoint


class ExperimentRunTests(TestCase):
    def setUp(self):
        self.run = ExperimentRun.start(
            command='train',
            environment='chain',
            config_hash='a' * 64,
            seed=7,
            output_dir='/tmp/run',
            iterations=100,
        )

    def test_start_registers_a_running_run(self):
        self.assertEqual(self.run.status, ExperimentRun.STATUS_RUNNING)
        self.assertIsNone(self.run.finished_at)
        self.assertEqual(str(self.run), "train chain seed=7 (running)")

    def test_finish_stores_the_summary(self):
        self.run.finish(ExperimentRun.STATUS_COMPLETED, final_model_order=12, iterations_completed=100)
        run = ExperimentRun.objects.get(pk=self.run.pk)
        self.assertEqual(run.status, ExperimentRun.STATUS_COMPLETED)
        self.assertEqual(run.final_model_order, 12)
        self.assertEqual(run.summary, {'iterations_completed': 100})
        self.assertIsNotNone(run.finished_at)

    def test_checkpoints_are_ordered_and_unique(self):
        RunCheckpoint.objects.create(run=self.run, iteration=10, model_order=3, value_mean=1.5)
        RunCheckpoint.objects.create(run=self.run, iteration=0, model_order=0)
        self.assertEqual([c.iteration for c in self.run.checkpoints.all()], [0, 10])
        self.assertEqual(str(self.run.checkpoints.first()), f"Run {self.run.pk} k=0 M=0")
        with self.assertRaises(IntegrityError):
            RunCheckpoint.objects.create(run=self.run, iteration=10, model_order=4)

    def test_deleting_a_run_drops_its_checkpoints(self):
        RunCheckpoint.objects.create(run=self.run, iteration=0, model_order=0)
        self.run.delete()
        self.assertFalse(RunCheckpoint.objects.exists())
