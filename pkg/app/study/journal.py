"""Append-only study journal and posterior snapshot files."""
import json
import logging
import os
import re
import threading
from pathlib import Path

import numpy as np

from app.bandit.exceptions import ConfigError
from app.simulation.trial_log import dumps_line

logger = logging.getLogger(__name__)

JOURNAL_FILE = 'journal.jsonl'
SNAPSHOT_PATTERN = re.compile(r'^snapshot-(\d+)\.npz$')


class Journal:
    """JSON-lines event log; every append is flushed and fsync'd before returning."""

    def __init__(self, state_dir):
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self.path = self.state_dir / JOURNAL_FILE
        self._lock = threading.Lock()
        self._handle = None
        self.seq = 0

    def read(self):
        """All events on disk; a torn final line from a crash is dropped."""
        if not self.path.exists():
            return []
        lines = self.path.read_text(encoding='utf-8').split('\n')
        events = []
        for k, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as exc:
                if k == len(lines) - 1:
                    logger.warning(f"dropping incomplete last journal line of {self.path}")
                    self._truncate(sum(len(x) + 1 for x in lines[:k]))
                    break
                raise ConfigError(f"journal {self.path} is corrupt at line {k + 1}: {exc}") from exc
        self.seq = events[-1]['seq'] + 1 if events else 0
        return events

    def _truncate(self, size):
        with self.path.open('r+b') as handle:
            handle.truncate(size)

    def append(self, event: dict) -> dict:
        with self._lock:
            if self._handle is None:
                self._handle = self.path.open('a', encoding='utf-8', newline='\n')
            event = {'seq': self.seq, **event}
            self._handle.write(dumps_line(event))
            self._handle.flush()
            os.fsync(self._handle.fileno())
            self.seq += 1
            return event

    def close(self):
        with self._lock:
            if self._handle is not None:
                self._handle.close()
                self._handle = None


def snapshot_path(state_dir, seq):
    return Path(state_dir) / f'snapshot-{seq}.npz'


def save_snapshot(state_dir, seq, means, covs, hp, reward_cursor, user_cursor):
    path = snapshot_path(state_dir, seq)
    with path.open('wb') as handle:
        np.savez(handle, means=means, covs=covs, sigma_eps_sq=hp.sigma_eps_sq, sigma_u=hp.sigma_u,
                 reward_cursor=reward_cursor, user_cursor=user_cursor)
        handle.flush()
        os.fsync(handle.fileno())
    return path


def latest_snapshot(state_dir):
    """(update seq, arrays) of the newest snapshot file, or None."""
    found = []
    for path in Path(state_dir).glob('snapshot-*.npz'):
        match = SNAPSHOT_PATTERN.match(path.name)
        if match:
            found.append((int(match.group(1)), path))
    if not found:
        return None
    seq, path = max(found)
    with np.load(path) as data:
        return seq, {key: data[key] for key in data.files}
