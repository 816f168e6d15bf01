"""Figures for evaluation runs: EPR vs WEPR ROC curves and the K-sweep."""

import logging
import os
from typing import Dict, Sequence, Tuple

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

try:
    from .evaluator import SweepRow
except ImportError:
    from evaluator import SweepRow

logger = logging.getLogger(__name__)


def _save(fig, path: str) -> None:
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    logger.info(f"Saved figure to {path}")


def plot_roc_curves(curves: Dict[str, Tuple[np.ndarray, np.ndarray, float]], path: str) -> None:
    """curves maps a method name to (fpr, tpr, auc)."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for method, (fpr, tpr, auc) in curves.items():
        ax.step(fpr, tpr, where='post', label=f"{method} (AUC = {auc:.3f})")
    ax.plot([0, 1], [0, 1], linestyle='--', color='grey', label='Random chance')
    ax.set_xlabel('False positive rate')
    ax.set_ylabel('True positive rate')
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(loc='lower right')
    _save(fig, path)


def plot_k_sweep(rows: Sequence[SweepRow], path: str) -> None:
    """Mean PR-AUC against K with a one-standard-deviation band."""
    ks = np.array([r.k for r in rows])
    mean = np.array([r.pr_auc_mean for r in rows])
    std = np.array([r.pr_auc_std for r in rows])

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, mean, marker='o', label='WEPR')
    ax.fill_between(ks, mean - std, mean + std, alpha=0.25)
    ax.set_xlabel('Ranked tokens considered (K)')
    ax.set_ylabel('Mean PR-AUC')
    ax.set_xticks(ks)
    ax.grid(alpha=0.3)
    ax.legend()
    _save(fig, path)
