import logging

from django.core.management.base import BaseCommand, CommandError

from app.bandit.baselines import ALGORITHMS
from app.bandit.exceptions import BanditError
from app.simulation.config import VARIANT_COUNT
from app.simulation.management.commands._options import trial_config
from app.simulation.metrics import write_run_artifacts
from app.simulation.runner import run_trials

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Run seeded simulated trials of one algorithm on one environment variant.'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='YAML or JSON trial config')
        parser.add_argument('--algorithm', choices=ALGORITHMS)
        parser.add_argument('--variant', type=int, choices=range(VARIANT_COUNT), metavar=f'0..{VARIANT_COUNT - 1}')
        parser.add_argument('--trials', type=int, dest='n_trials')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--users', type=int, dest='m')
        parser.add_argument('--days', type=int)
        parser.add_argument('--workers', type=int)
        parser.add_argument('--no-logs', action='store_true', help='skip per-trial JSONL logs')
        parser.add_argument('--out', required=True, help='output directory')

    def handle(self, *args, **options):
        cfg = trial_config(
            options['config'],
            algorithm=options['algorithm'],
            variant=options['variant'],
            n_trials=options['n_trials'],
            seed=options['seed'],
            m=options['m'],
            days=options['days'],
            workers=options['workers'],
            write_logs=False if options['no_logs'] else None,
        )
        try:
            results = run_trials(cfg, options['out'])
            summary = write_run_artifacts(options['out'], cfg, results)
        except BanditError as exc:
            raise CommandError(str(exc)) from exc

        self.stdout.write(self.style.SUCCESS(
            f"{summary['algorithm']} variant {summary['variant']}: mean {summary['mean']:.3f} "
            f"(95% CI +/- {summary['ci_half_width']:.3f}), send rate {summary['send_rate_mean']:.3f}, "
            f"{summary['n_trials']} trials -> {options['out']}"))
