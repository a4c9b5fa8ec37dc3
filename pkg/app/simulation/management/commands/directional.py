from django.core.management.base import BaseCommand, CommandError

from app.bandit.exceptions import BanditError
from app.simulation.directional import HETEROGENEOUS, run_directional_checks
from app.simulation.management.commands._options import trial_config


class Command(BaseCommand):
    help = 'Directional acceptance checks at desk scale (reduced trials and users).'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='YAML or JSON trial config')
        parser.add_argument('--trials', type=int, default=100, dest='n_trials')
        parser.add_argument('--users', type=int, default=40, dest='m')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--workers', type=int)
        parser.add_argument('--heterogeneity', type=float, default=HETEROGENEOUS)
        parser.add_argument('--out', required=True, help='output directory')

    def handle(self, *args, **options):
        cfg = trial_config(options['config'], n_trials=options['n_trials'], m=options['m'], seed=options['seed'],
                           workers=options['workers'])
        try:
            rows = run_directional_checks(cfg, options['out'], options['heterogeneity'])
        except BanditError as exc:
            raise CommandError(str(exc)) from exc

        for row in rows:
            style = self.style.SUCCESS if row['passed'] else self.style.ERROR
            self.stdout.write(style(
                f"{row['check']}: {row['mean_a']:.2f} vs {row['mean_b']:.2f}, "
                f"wins {row['wins_a']}/{row['n_trials']} -> {row['classification']}"))
        failed = [row['check'] for row in rows if not row['passed']]
        if failed:
            raise CommandError(f"directional checks failed: {', '.join(failed)}")
