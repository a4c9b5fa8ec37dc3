"""Aggregate metrics, pairwise comparison and run artifacts."""
import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from app import __version__
from app.bandit.exceptions import InvalidInputError
from app.simulation.config import TrialConfig, variant_id

logger = logging.getLogger(__name__)

Z_95 = 1.96

CI_POPULATION_NOTE = ('ci_half_width: 1.96 * SE over the pooled per-user totals of all trials; '
                      'trial_mean_ci_half_width: 1.96 * SE over per-trial means')

A_BETTER = 'a-better'
B_BETTER = 'b-better'
A_WINS_MAJORITY = 'a-wins-majority'
B_WINS_MAJORITY = 'b-wins-majority'
COMPARABLE = 'comparable'


def ci_half_width(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(Z_95 * values.std(ddof=1) / np.sqrt(values.size))


def aggregate(results, lam=None, variant=None) -> dict:
    """Summary row over trials: pooled mean of per-user totals and its 95% CI."""
    if not results:
        raise InvalidInputError("cannot aggregate zero trials")
    pooled = np.concatenate([r.user_totals for r in results])
    trial_means = np.array([r.mean for r in results])
    send_rates = np.array([r.send_rate for r in results])
    return {
        'algorithm': results[0].algorithm,
        'variant': variant,
        'n_trials': len(results),
        'm': int(results[0].user_totals.size),
        'T': results[0].decision_points,
        'mean': float(pooled.mean()),
        'ci_half_width': ci_half_width(pooled),
        'trial_mean_ci_half_width': ci_half_width(trial_means),
        'send_rate_mean': float(send_rates.mean()),
        'send_rate_sd': float(send_rates.std(ddof=1)) if send_rates.size > 1 else 0.0,
        'lambda': lam,
    }


def trial_means_frame(results) -> pd.DataFrame:
    return pd.DataFrame({
        'trial': [r.trial_index for r in results],
        'seed': [str(r.trial_seed) for r in results],
        'mean': [r.mean for r in results],
        'send_rate': [r.send_rate for r in results],
    })


def pairwise_win_count(a: Sequence[float], b: Sequence[float]) -> int:
    """Trials where a's per-trial mean strictly exceeds b's."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"seed-matched comparisons need equal lengths, got {a.size} and {b.size}")
    return int(np.sum(a > b))


def classify(mean_a, ci_a, mean_b, ci_b, wins_a, wins_b, n):
    overlap = abs(mean_a - mean_b) < ci_a + ci_b
    if not overlap:
        return A_BETTER if mean_a > mean_b else B_BETTER
    if wins_a > n / 2:
        return A_WINS_MAJORITY
    if wins_b > n / 2:
        return B_WINS_MAJORITY
    return COMPARABLE


def compare_summaries(summary_a: dict, means_a, summary_b: dict, means_b) -> dict:
    means_a = np.asarray(means_a, dtype=float)
    means_b = np.asarray(means_b, dtype=float)
    wins_a = pairwise_win_count(means_a, means_b)
    wins_b = pairwise_win_count(means_b, means_a)
    n = means_a.size
    mean_a, ci_a = float(summary_a['mean']), float(summary_a['ci_half_width'])
    mean_b, ci_b = float(summary_b['mean']), float(summary_b['ci_half_width'])
    return {
        'algorithm_a': summary_a['algorithm'],
        'algorithm_b': summary_b['algorithm'],
        'variant': summary_a.get('variant'),
        'n_trials': n,
        'mean_a': mean_a,
        'ci_a': ci_a,
        'mean_b': mean_b,
        'ci_b': ci_b,
        'ci_overlap': bool(abs(mean_a - mean_b) < ci_a + ci_b),
        'wins_a': wins_a,
        'wins_b': wins_b,
        'ties': n - wins_a - wins_b,
        'classification': classify(mean_a, ci_a, mean_b, ci_b, wins_a, wins_b, n),
    }


def write_run_artifacts(out_dir, cfg: TrialConfig, results) -> dict:
    """summary.csv, trial_means.csv, posterior_trace.csv and manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = aggregate(results, lam=cfg.lam, variant=variant_id(cfg.env))
    pd.DataFrame([summary]).to_csv(out_dir / 'summary.csv', index=False)
    trial_means_frame(results).to_csv(out_dir / 'trial_means.csv', index=False)

    trace = [row for r in results for row in r.posterior_trace]
    pd.DataFrame(trace).to_csv(out_dir / 'posterior_trace.csv', index=False)

    manifest = {
        'version': __version__,
        'config_hash': cfg.config_hash(),
        'config': cfg.to_dict(),
        'root_seed': cfg.seed,
        'trial_seeds': [str(r.trial_seed) for r in results],
        'ci_population': CI_POPULATION_NOTE,
        'lambda': cfg.lam,
        'numerical_warnings': int(sum(r.numerical_warnings for r in results)),
    }
    (out_dir / 'manifest.json').write_text(json.dumps(manifest, indent=2), encoding='utf-8')
    logger.info(f"{summary['algorithm']} variant {summary['variant']}: mean {summary['mean']:.3f} "
                f"+/- {summary['ci_half_width']:.3f} over {summary['n_trials']} trials")
    return summary


def read_run(out_dir):
    """(summary row, per-trial means) of a ``run`` output directory."""
    out_dir = Path(out_dir)
    try:
        summary = pd.read_csv(out_dir / 'summary.csv').iloc[0].to_dict()
        means = pd.read_csv(out_dir / 'trial_means.csv', dtype={'seed': str}).sort_values('trial')['mean'].to_numpy()
    except FileNotFoundError as exc:
        raise InvalidInputError(f"{out_dir} is not a run output directory: {exc}") from exc
    return summary, means
