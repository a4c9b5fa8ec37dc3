from pathlib import Path

import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from app.bandit.exceptions import BanditError
from app.simulation.metrics import compare_summaries, read_run


class Command(BaseCommand):
    help = 'Compare two run directories: CI overlap, seed-matched win counts and classification.'

    def add_arguments(self, parser):
        parser.add_argument('--a', required=True, help='run directory of algorithm a')
        parser.add_argument('--b', required=True, help='run directory of algorithm b')
        parser.add_argument('--out', help='comparison.csv path (default: <a>/comparison.csv)')

    def handle(self, *args, **options):
        try:
            summary_a, means_a = read_run(options['a'])
            summary_b, means_b = read_run(options['b'])
            seeds_a = pd.read_csv(Path(options['a']) / 'trial_means.csv', dtype={'seed': str})['seed']
            seeds_b = pd.read_csv(Path(options['b']) / 'trial_means.csv', dtype={'seed': str})['seed']
            if not seeds_a.equals(seeds_b):
                self.stderr.write(self.style.WARNING('trial seeds differ; win counts are not seed-matched'))
            row = compare_summaries(summary_a, means_a, summary_b, means_b)
        except BanditError as exc:
            raise CommandError(str(exc)) from exc

        out = Path(options['out'] or Path(options['a']) / 'comparison.csv')
        pd.DataFrame([row]).to_csv(out, index=False)
        self.stdout.write(
            f"{row['algorithm_a']} {row['mean_a']:.3f} +/- {row['ci_a']:.3f} vs "
            f"{row['algorithm_b']} {row['mean_b']:.3f} +/- {row['ci_b']:.3f}; "
            f"wins {row['wins_a']}/{row['wins_b']} (ties {row['ties']}) -> {row['classification']}")
        self.stdout.write(self.style.SUCCESS(f'written {out}'))
