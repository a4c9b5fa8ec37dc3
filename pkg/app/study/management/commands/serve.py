from django.core.management import call_command
from django.core.management.base import BaseCommand, CommandError

from app.bandit.exceptions import BanditError
from app.study.engine import configure_engine


class Command(BaseCommand):
    help = 'Recover the study state from its journal and serve the decision API.'

    def add_arguments(self, parser):
        parser.add_argument('--port', type=int, default=8000)
        parser.add_argument('--host', default='127.0.0.1')
        parser.add_argument('--state-dir', help='journal and snapshot directory (default: STUDY_STATE_DIR)')
        parser.add_argument('--config', help='study config YAML (default: STUDY_CONFIG)')

    def handle(self, *args, **options):
        try:
            engine = configure_engine(options['state_dir'], options['config'])
        except BanditError as exc:
            raise CommandError(str(exc)) from exc

        status = engine.status()
        self.stdout.write(f"study state in {engine.state_dir}: {status['users']} users, "
                          f"{status['decisions']} decisions, snapshot {status['snapshot']}")
        # the reloader would start a second engine on the same journal
        call_command('runserver', f"{options['host']}:{options['port']}", use_reloader=False)
