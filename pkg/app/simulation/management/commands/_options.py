from django.conf import settings
from django.core.management.base import CommandError

from app.bandit.exceptions import BanditError
from app.simulation.config import load_trial_config


def trial_config(path=None, **overrides):
    """Trial config from ``path`` layered over settings.REBANDIT, then CLI overrides."""
    try:
        cfg = load_trial_config(path, defaults=getattr(settings, 'REBANDIT', None))
        return cfg.with_overrides(**overrides)
    except BanditError as exc:
        raise CommandError(str(exc)) from exc
