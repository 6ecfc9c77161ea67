import json
import logging
import os

from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from policy_engine import experiments
from policy_engine.exceptions import PolicyEngineError

logger = logging.getLogger(__name__)

USAGE_ERROR = 1
RUNTIME_ERROR = 2


def _state_vector(text):
    try:
        return [float(x) for x in text.split(',')]
    except ValueError:
        raise CommandError(f"--state must be comma-separated numbers, got {text!r}", returncode=USAGE_ERROR)


class Command(BaseCommand):
    help = "Train, evaluate and analyse RKHS Gaussian policies (train | eval | bounds | replay-figures)"

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='subcommand', required=True)

        def common(sub):
            sub.add_argument('--config', required=True, help="Experiment config JSON (or a run manifest)")
            sub.add_argument('--out', help="Output directory")
            sub.add_argument('--seed', type=int, help="Overrides trainer.seed")
            sub.add_argument('--iterations', type=int, help="Overrides schedule.num_iterations")

        common(subparsers.add_parser('train', help="Run online training"))
        evaluate = subparsers.add_parser('eval', help="Evaluate a policy snapshot")
        common(evaluate)
        evaluate.add_argument('--policy', required=True, help="Policy snapshot JSON")
        evaluate.add_argument('--state', help="Comma-separated conditioning state")
        common(subparsers.add_parser('bounds', help="Print the theoretical constants and the verdict"))
        replay = subparsers.add_parser('replay-figures', help="Rebuild figure datasets from a run directory")
        replay.add_argument('--run-dir', help="Training run directory (defaults to --out)")
        replay.add_argument('--out', help="Training run directory")

    def handle(self, *args, **options):
        subcommand = options['subcommand']
        try:
            if subcommand == 'replay-figures':
                return self.replay(options)
            cfg = experiments.load_experiment_config(options['config'], options.get('seed'),
                                                     options.get('iterations'))
            if subcommand == 'train':
                return self.train(cfg, options)
            if subcommand == 'eval':
                return self.evaluate(cfg, options)
            return self.bounds(cfg)
        except FileNotFoundError as e:
            raise CommandError(str(e), returncode=USAGE_ERROR)
        except serializers.ValidationError as e:
            raise CommandError(f"Invalid configuration: {json.dumps(e.detail, default=str)}",
                               returncode=USAGE_ERROR)
        except PolicyEngineError as e:
            logger.error(f"kpg {subcommand} failed: {e}")
            raise CommandError(str(e), returncode=RUNTIME_ERROR)

    def train(self, cfg, options):
        out_dir = experiments.resolve_output_dir(cfg, options.get('out'), 'train')
        summary = experiments.run_training(cfg, out_dir)
        self.stdout.write(self.style.SUCCESS(
            f"Trained {summary['iterations_completed']} iterations, final model order "
            f"{summary['final_model_order']}; outputs in {out_dir}"
        ))

    def evaluate(self, cfg, options):
        state = _state_vector(options['state']) if options.get('state') else None
        out_dir = experiments.resolve_output_dir(cfg, options.get('out'), 'eval')
        result = experiments.run_evaluation(cfg, options['policy'], out_dir, state)
        self.stdout.write(self.style.SUCCESS(
            f"U_hat = {result['mean']!r} (stderr {result['stderr']!r}, N={result['n_episodes']}, "
            f"T={result['horizon']}); outputs in {out_dir}"
        ))

    def bounds(self, cfg):
        report = experiments.run_bounds(cfg)
        self.stdout.write(experiments.format_bounds_table(report))

    def replay(self, options):
        run_dir = options.get('run_dir') or options.get('out')
        if not run_dir:
            raise CommandError("replay-figures needs --run-dir", returncode=USAGE_ERROR)
        if not os.path.isdir(run_dir):
            raise CommandError(f"Run directory not found: {run_dir}", returncode=USAGE_ERROR)
        written = experiments.replay_figures(run_dir)
        for path in written:
            self.stdout.write(path)
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(written)} figure datasets"))
