"""JSON-lines trial logs: one header, then decision and update events in loop order."""
import json
import logging
from pathlib import Path

import numpy as np

from app.bandit.exceptions import ConfigError
from app.bandit.policy import DecisionRecord

logger = logging.getLogger(__name__)

LOG_FORMAT = 'rebandit.trial-log/v1'

HEADER = 'header'
DECISION = 'decision'
UPDATE = 'update'

POSTERIOR_UPDATE = 'posterior'
HYPERPARAM_UPDATE = 'hyperparams'


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dumps_line(event: dict) -> str:
    """Compact JSON; floats keep repr precision so logs are byte-stable."""
    return json.dumps(event, separators=(',', ':'), default=_json_default) + '\n'


class TrialLogWriter:
    """Writes one trial's log; with ``path=None`` events are dropped."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._handle = None

    def __enter__(self):
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open('w', encoding='utf-8', newline='\n')
        return self

    def __exit__(self, *exc):
        if self._handle is not None:
            self._handle.close()
            self._handle = None
        return False

    def _write(self, event):
        if self._handle is not None:
            self._handle.write(dumps_line(event))

    def header(self, config: dict, trial_seed: int, trial_index: int, algorithm: str, variant, version: str):
        self._write({'kind': HEADER, 'format': LOG_FORMAT, 'version': version, 'algorithm': algorithm,
                     'variant': variant, 'trial_index': trial_index, 'trial_seed': trial_seed, 'config': config})

    def decision(self, record: DecisionRecord):
        self._write({'kind': DECISION, **record.to_dict()})

    def update(self, t: int, update: str, summary=None, hyperparams=None, error=None):
        event = {'kind': UPDATE, 't': t, 'update': update, 'summary': summary, 'hyperparams': hyperparams}
        if error is not None:
            event['error'] = error
        self._write(event)


class TrialLog:
    """A parsed trial log."""

    def __init__(self, header: dict, events: list):
        self.header = header
        self.events = events

    @property
    def config(self):
        return self.header['config']

    def decisions(self):
        return [DecisionRecord.from_dict(e) for e in self.events if e['kind'] == DECISION]

    def raw_reward_totals(self, m):
        totals = np.zeros(m)
        for e in self.events:
            if e['kind'] == DECISION:
                totals[e['user']] += e['raw_reward']
        return totals


def read_trial_log(path) -> TrialLog:
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except FileNotFoundError as exc:
        raise ConfigError(f"trial log not found: {path}") from exc
    if not lines:
        raise ConfigError(f"trial log {path} is empty")
    try:
        events = [json.loads(line) for line in lines if line.strip()]
    except json.JSONDecodeError as exc:
        raise ConfigError(f"trial log {path} has a malformed line: {exc}") from exc
    header = events[0]
    if header.get('kind') != HEADER or header.get('format') != LOG_FORMAT:
        raise ConfigError(f"trial log {path} does not start with a {LOG_FORMAT} header")
    return TrialLog(header, events[1:])
