#!/usr/bin/env python3
"""
Run synth -> train -> eval on the frozen synthetic generators and report the
EPR baseline vs WEPR gap for each.
"""

import sys
import os
import argparse
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from config import build_run_config
from pipeline import HallucinationDetector
from synthetic import FROZEN_SPECS
import logging

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def main():
    """Benchmark both frozen generator presets."""
    parser = argparse.ArgumentParser(description='Synthetic EPR vs WEPR benchmark')
    parser.add_argument('--workdir', default='data/benchmark',
                        help='Directory for datasets, models and reports (default: data/benchmark)')
    parser.add_argument('--iterations', type=int, default=1000,
                        help='Bootstrap iterations (default: 1000)')
    parser.add_argument('--k-sweep', action='store_true',
                        help='Also run the K-sweep on each preset')

    args = parser.parse_args()

    try:
        os.makedirs(args.workdir, exist_ok=True)
        config = build_run_config({'evaluation': {'bootstrap_iterations': args.iterations}})
        detector = HallucinationDetector(config)

        for preset in sorted(FROZEN_SPECS):
            stem = os.path.join(args.workdir, preset)
            detector.synth(f"{stem}.jsonl", FROZEN_SPECS[preset])
            detector.train(f"{stem}.jsonl", f"{stem}_model.json")
            summary = detector.evaluate(f"{stem}.jsonl", f"{stem}_model.json", f"{stem}_report.json")

            gap = summary['wepr_roc_auc'] - summary['epr_roc_auc']
            logger.info(f"{preset}: EPR ROC-AUC {summary['epr_roc_auc']:.4f}, "
                        f"WEPR ROC-AUC {summary['wepr_roc_auc']:.4f} (gap {gap:+.4f})")

            if args.k_sweep:
                sweep = detector.sweep(f"{stem}.jsonl", f"{stem}_sweep.csv", plot_path=f"{stem}_sweep.png")
                logger.info(f"{preset} K-sweep:\n{sweep['table'].to_string(index=False)}")

    except Exception as e:
        logger.error(f"Benchmark failed: {e}")
        sys.exit(1)

if __name__ == "__main__":
    main()
