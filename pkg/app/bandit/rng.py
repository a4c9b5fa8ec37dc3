"""Named, independent random streams derived from one root seed.

root seed -> per-trial seeds -> (stream name, *key) substreams, each a
counter-based Philox generator. Adding draws to one consumer never moves
another consumer's stream.
"""
import numpy as np

from app.bandit.exceptions import InvalidInputError

STREAM_IDS = {
    'trial': 0,
    'population': 1,
    'environment': 2,
    'policy': 3,
    'data': 4,
}


def _seed_sequence(seed, *key):
    if seed is None or int(seed) < 0:
        raise InvalidInputError(f"seeds must be non-negative integers, got {seed!r}")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))


def trial_seeds(root_seed, n_trials):
    """Deterministic per-trial seeds; trial k's seed does not depend on n_trials."""
    return [int(_seed_sequence(root_seed, STREAM_IDS['trial'], k).generate_state(1, np.uint64)[0])
            for k in range(n_trials)]


def stream(seed, name, *key) -> np.random.Generator:
    """Generator for the named substream of ``seed``; ``key`` distinguishes e.g. users."""
    if name not in STREAM_IDS:
        raise InvalidInputError(f"unknown random stream {name!r}")
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, STREAM_IDS[name], *key)))


def generator_state(rng: np.random.Generator) -> dict:
    """JSON-serialisable bit-generator state."""
    state = rng.bit_generator.state
    return {
        'bit_generator': state['bit_generator'],
        'counter': [int(v) for v in state['state']['counter']],
        'key': [int(v) for v in state['state']['key']],
        'buffer': [int(v) for v in state['buffer']],
        'buffer_pos': int(state['buffer_pos']),
        'has_uint32': int(state['has_uint32']),
        'uinteger': int(state['uinteger']),
    }


def generator_from_state(data: dict) -> np.random.Generator:
    if data.get('bit_generator') != 'Philox':
        raise InvalidInputError(f"unsupported bit generator {data.get('bit_generator')!r}")
    bit_generator = np.random.Philox()
    bit_generator.state = {
        'bit_generator': 'Philox',
        'state': {
            'counter': np.array(data['counter'], dtype=np.uint64),
            'key': np.array(data['key'], dtype=np.uint64),
        },
        'buffer': np.array(data['buffer'], dtype=np.uint64),
        'buffer_pos': int(data['buffer_pos']),
        'has_uint32': int(data['has_uint32']),
        'uinteger': int(data['uinteger']),
    }
    return np.random.Generator(bit_generator)
