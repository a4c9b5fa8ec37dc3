from pathlib import Path

import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from app.bandit.exceptions import BanditError
from app.simulation.replay import diagnose_trial_log


class Command(BaseCommand):
    help = 'Population statistics of every posterior-update epoch of a trial log, as CSV.'

    def add_arguments(self, parser):
        parser.add_argument('--log', required=True, help='trial-<k>.jsonl file')
        parser.add_argument('--out', help='CSV path (default: next to the log)')

    def handle(self, *args, **options):
        log = Path(options['log'])
        try:
            rows = diagnose_trial_log(log)
        except BanditError as exc:
            raise CommandError(str(exc)) from exc

        out = Path(options['out'] or log.with_suffix('.diagnostics.csv'))
        pd.DataFrame(rows).to_csv(out, index=False)
        self.stdout.write(self.style.SUCCESS(f'{len(rows)} epochs written to {out}'))
