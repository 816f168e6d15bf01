"""
Evaluation protocol: grouped splits, ROC-AUC / PR-AUC, bootstrap statistics,
EPR-baseline vs WEPR comparison and K-sweeps.

The positive class is Y=1 (valid answer). EPR enters negated so that a higher
score always means "more likely valid".
"""

import hashlib
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

try:
    from .entropy_core import SequenceEntropyProfile, sequence_profile
    from .exceptions import DomainError, MetricError, SplitError
    from .logprob_model import LabeledExample
    from .wepr import VALID_HIGH, TrainConfig, WeprModel, feature_matrix, fit_features, score_sequence
except ImportError:
    from entropy_core import SequenceEntropyProfile, sequence_profile
    from exceptions import DomainError, MetricError, SplitError
    from logprob_model import LabeledExample
    from wepr import VALID_HIGH, TrainConfig, WeprModel, feature_matrix, fit_features, score_sequence

logger = logging.getLogger(__name__)

EPR_BASELINE = 'epr_baseline'
WEPR = 'wepr'

# Redraws allowed per bootstrap iteration when a resample holds a single class
MAX_REDRAWS_PER_ITERATION = 10

SWEEP_COLUMNS = ['k', 'pr_auc_mean', 'pr_auc_std', 'roc_auc_mean', 'roc_auc_std']


@dataclass(frozen=True)
class SplitPlan:
    """Train/test partition of query groups."""
    train_group_ids: FrozenSet[str]
    test_group_ids: FrozenSet[str]
    seed: int
    test_fraction: float

    def partition(self, examples: Sequence[LabeledExample]) -> Tuple[List[LabeledExample], List[LabeledExample]]:
        train = [e for e in examples if e.query_id in self.train_group_ids]
        test = [e for e in examples if e.query_id in self.test_group_ids]
        return train, test

    def to_dict(self) -> Dict[str, Any]:
        return {
            'seed': self.seed,
            'test_fraction': self.test_fraction,
            'n_train_groups': len(self.train_group_ids),
            'n_test_groups': len(self.test_group_ids),
        }


@dataclass(frozen=True)
class BootstrapStats:
    iterations: int
    pr_auc_mean: float
    pr_auc_std: float
    roc_auc_mean: float
    roc_auc_std: float
    redraws: int = 0


@dataclass(frozen=True)
class EvalReport:
    """Point metrics and bootstrap statistics of one method on one split."""
    method: str
    pr_auc: float
    roc_auc: float
    bootstrap: BootstrapStats
    n_pos: int
    n_neg: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class SweepRow:
    k: int
    pr_auc_mean: float
    pr_auc_std: float
    roc_auc_mean: float
    roc_auc_std: float


def _group_rank(query_id: str, seed: int) -> str:
    return hashlib.sha256(f"{seed}:{query_id}".encode('utf-8')).hexdigest()


def grouped_split(examples: Sequence[LabeledExample], test_fraction: float = 0.3,
                  seed: int = 42) -> SplitPlan:
    """
    Split by query_id so no query lands on both sides.

    Groups are ordered by a seeded hash of their id and the first
    round(test_fraction * n_groups) of them (at least one, at most n - 1) form
    the test side.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    groups = sorted({e.query_id for e in examples})
    if len(groups) < 2:
        raise SplitError(f"need at least 2 query groups to split, got {len(groups)}")

    n_test = int(math.floor(test_fraction * len(groups) + 0.5))
    n_test = min(max(n_test, 1), len(groups) - 1)
    ordered = sorted(groups, key=lambda g: (_group_rank(g, seed), g))
    test = frozenset(ordered[:n_test])
    train = frozenset(ordered[n_test:])

    logger.info(f"Grouped split: {len(train)} train groups, {len(test)} test groups (seed {seed})")
    return SplitPlan(train_group_ids=train, test_group_ids=test, seed=seed, test_fraction=test_fraction)


def _validate(scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError("scores and labels must be 1-D and of equal length")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores must be finite")
    if np.any((y != 0) & (y != 1)):
        raise MetricError("labels must be 0 or 1")
    return s, y


def _midranks(s: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing their average rank."""
    order = np.argsort(s, kind='mergesort')
    ordered = s[order]
    new_block = np.r_[True, ordered[1:] != ordered[:-1]]
    block_id = np.cumsum(new_block) - 1
    bounds = np.r_[np.flatnonzero(new_block), len(s)]
    block_rank = (bounds[:-1] + 1 + bounds[1:]) / 2.0
    ranks = np.empty(len(s))
    ranks[order] = block_rank[block_id]
    return ranks


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg) + P(tie) / 2."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC needs both classes")
    rank_sum = _midranks(s)[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _threshold_blocks(s: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative TP/FP at the end of each block of equal scores, descending."""
    order = np.argsort(-s, kind='mergesort')
    ordered, hits = s[order], y[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(1 - hits)
    ends = np.r_[np.flatnonzero(ordered[1:] != ordered[:-1]), len(s) - 1]
    return tp[ends], fp[ends], ordered[ends]


def pr_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Step-interpolated average precision; equal scores form one threshold."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("PR-AUC needs at least one positive")
    tp, fp, _ = _threshold_blocks(s, y)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    previous = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - previous) * precision))


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) starting from (0, 0) at threshold +inf."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC curve needs both classes")
    tp, fp, thresholds = _threshold_blocks(s, y)
    return np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos], np.r_[np.inf, thresholds]


def _bootstrap_iteration(s: np.ndarray, y: np.ndarray, seed: int, index: int) -> Tuple[float, float, int]:
    # Each iteration owns a substream, so scheduling cannot change results
    rng = np.random.default_rng([seed, index])
    n = len(y)
    for redraw in range(MAX_REDRAWS_PER_ITERATION + 1):
        sample = rng.integers(0, n, size=n)
        positives = int(y[sample].sum())
        if 0 < positives < n:
            return pr_auc(s[sample], y[sample]), roc_auc(s[sample], y[sample]), redraw
    raise MetricError(f"bootstrap iteration {index}: single-class resample after "
                      f"{MAX_REDRAWS_PER_ITERATION} redraws")


def bootstrap_eval(scores: Sequence[float], labels: Sequence[int], iterations: int = 1000,
                   seed: int = 42, n_jobs: int = 1) -> BootstrapStats:
    """Mean and standard deviation of PR-AUC and ROC-AUC over resampled pairs."""
    if iterations < 1:
        raise DomainError("bootstrap needs at least one iteration")
    s, y = _validate(scores, labels)
    if y.sum() == 0 or y.sum() == len(y):
        raise MetricError("bootstrap needs both classes")

    if n_jobs == 1:
        results = [_bootstrap_iteration(s, y, seed, i) for i in range(iterations)]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(_bootstrap_iteration)(s, y, seed, i) for i in range(iterations))

    prs = np.array([r[0] for r in results])
    rocs = np.array([r[1] for r in results])
    return BootstrapStats(
        iterations=iterations,
        pr_auc_mean=float(prs.mean()),
        pr_auc_std=float(prs.std()),
        roc_auc_mean=float(rocs.mean()),
        roc_auc_std=float(rocs.std()),
        redraws=int(sum(r[2] for r in results)),
    )


def evaluate_scores(method: str, scores: Sequence[float], labels: Sequence[int],
                    iterations: int = 1000, seed: int = 42, n_jobs: int = 1) -> EvalReport:
    y = np.asarray(labels, dtype=int)
    return EvalReport(
        method=method,
        pr_auc=pr_auc(scores, y),
        roc_auc=roc_auc(scores, y),
        bootstrap=bootstrap_eval(scores, y, iterations=iterations, seed=seed, n_jobs=n_jobs),
        n_pos=int(y.sum()),
        n_neg=int(len(y) - y.sum()),
    )


def profile_examples(examples: Sequence[LabeledExample], n_jobs: int = 1) -> List[SequenceEntropyProfile]:
    """Sequence profiles in input order."""
    if n_jobs == 1:
        return [sequence_profile(e.record) for e in examples]
    return Parallel(n_jobs=n_jobs)(delayed(sequence_profile)(e.record) for e in examples)


def method_scores(profiles: Sequence[SequenceEntropyProfile],
                  model: WeprModel) -> Tuple[np.ndarray, np.ndarray]:
    """(EPR baseline scores, WEPR scores), both higher-means-valid."""
    epr_scores = np.array([-p.epr for p in profiles])
    wepr_scores = np.array([score_sequence(model, p).validity_score for p in profiles])
    return epr_scores, wepr_scores


def compare_methods(test_set: Sequence[LabeledExample], model: WeprModel, iterations: int = 1000,
                    seed: int = 42, n_jobs: int = 1) -> Tuple[EvalReport, EvalReport]:
    """EPR baseline and WEPR reports on the same examples and bootstrap streams."""
    labeled = [e for e in test_set if e.is_labeled]
    if len(labeled) < len(test_set):
        logger.warning(f"Skipping {len(test_set) - len(labeled)} unlabeled examples")
    labels = np.array([e.label for e in labeled], dtype=int)
    if len(np.unique(labels)) < 2:
        raise MetricError("test set needs both labels")

    profiles = profile_examples(labeled, n_jobs=n_jobs)
    epr_scores, wepr_scores = method_scores(profiles, model)

    epr_report = evaluate_scores(EPR_BASELINE, epr_scores, labels, iterations, seed, n_jobs)
    wepr_report = evaluate_scores(WEPR, wepr_scores, labels, iterations, seed, n_jobs)
    logger.info(f"EPR baseline: PR-AUC {epr_report.pr_auc:.4f} ROC-AUC {epr_report.roc_auc:.4f} | "
                f"WEPR: PR-AUC {wepr_report.pr_auc:.4f} ROC-AUC {wepr_report.roc_auc:.4f}")
    return epr_report, wepr_report


def _sweep_cell(k: int, X_train: np.ndarray, y_train: np.ndarray, X_test: np.ndarray,
                y_test: np.ndarray, train_config: TrainConfig, iterations: int, seed: int) -> SweepRow:
    model = fit_features(X_train[:, :k], y_train, train_config)
    scores = _oriented(model, model.decision(X_test[:, :k]))
    stats = bootstrap_eval(scores, y_test, iterations=iterations, seed=seed)
    logger.info(f"K={k}: PR-AUC {stats.pr_auc_mean:.4f} +/- {stats.pr_auc_std:.4f}")
    return SweepRow(k=k, pr_auc_mean=stats.pr_auc_mean, pr_auc_std=stats.pr_auc_std,
                    roc_auc_mean=stats.roc_auc_mean, roc_auc_std=stats.roc_auc_std)


def _oriented(model: WeprModel, wepr_values: np.ndarray) -> np.ndarray:
    # the ranking of sigma(+-wepr) is that of +-wepr
    return wepr_values if model.orientation == VALID_HIGH else -wepr_values


def sweep_k(dataset: Sequence[LabeledExample], k_values: Sequence[int], split_seed: int = 42,
            test_fraction: float = 0.3, train_config: Optional[TrainConfig] = None,
            iterations: int = 1000, bootstrap_seed: int = 42, n_jobs: int = 1) -> List[SweepRow]:
    """Retrain and evaluate WEPR on the top-K ranks for each K, ordered by K."""
    train_config = train_config or TrainConfig()
    labeled = [e for e in dataset if e.is_labeled]
    profiles = profile_examples(labeled, n_jobs=n_jobs)
    data_k = feature_matrix(profiles).shape[1] if profiles else 0

    ks = sorted(set(int(k) for k in k_values))
    if not ks or ks[0] < 1 or ks[-1] > data_k:
        raise DomainError(f"K values {ks} must lie in [1, {data_k}] for this dataset")

    plan = grouped_split(labeled, test_fraction=test_fraction, seed=split_seed)
    train_idx = [i for i, e in enumerate(labeled) if e.query_id in plan.train_group_ids]
    test_idx = [i for i, e in enumerate(labeled) if e.query_id in plan.test_group_ids]

    X = feature_matrix(profiles)
    y = np.array([e.label for e in labeled], dtype=float)
    X_train, y_train = X[train_idx], y[train_idx]
    X_test, y_test = X[test_idx], y[test_idx].astype(int)

    args = (X_train, y_train, X_test, y_test, train_config, iterations, bootstrap_seed)
    if n_jobs == 1:
        rows = [_sweep_cell(k, *args) for k in ks]
    else:
        rows = Parallel(n_jobs=n_jobs)(delayed(_sweep_cell)(k, *args) for k in ks)
    return sorted(rows, key=lambda r: r.k)


def sweep_to_frame(rows: Sequence[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows], columns=SWEEP_COLUMNS)


def reports_to_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """Flat table of reports, one row per method."""
    rows = []
    for report in reports:
        row = {
            'method': report.method,
            'pr_auc': report.pr_auc,
            'roc_auc': report.roc_auc,
            'n_pos': report.n_pos,
            'n_neg': report.n_neg,
        }
        row.update({f"bootstrap_{k}": v for k, v in asdict(report.bootstrap).items()})
        rows.append(row)
    return pd.DataFrame(rows)
