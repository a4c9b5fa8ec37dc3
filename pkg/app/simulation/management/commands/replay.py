from django.core.management.base import BaseCommand, CommandError

from app.bandit.exceptions import BanditError
from app.simulation.management.commands._options import trial_config
from app.simulation.replay import replay_trial_log


class Command(BaseCommand):
    help = 'Recompute every probability and action of a trial log without the environment.'

    def add_arguments(self, parser):
        parser.add_argument('--log', required=True, help='trial-<k>.jsonl file')
        parser.add_argument('--config', help='replay under this config instead of the logged one')

    def handle(self, *args, **options):
        config = trial_config(options['config']) if options['config'] else None
        try:
            report = replay_trial_log(options['log'], config)
        except BanditError as exc:
            raise CommandError(str(exc)) from exc

        self.stdout.write(f"{report.records} decisions, {report.updates} updates replayed")
        if not report.ok:
            raise CommandError(f"{report.mismatches} mismatching decisions; first: {report.first_mismatch}")
        self.stdout.write(self.style.SUCCESS('0 mismatches'))
