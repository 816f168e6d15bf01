#!/usr/bin/env python3
"""
Main entry point for the top-K logprob hallucination detector
"""

import argparse
import logging
import os
import sys

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from config import build_run_config, setup_logging
from exceptions import (DetectorError, DomainError, IngestError, JudgeTransportError, MetricError,
                        SplitError, TrainError)
from judge_annotator import JUDGE_MODES
from logprob_model import LABEL_SOURCES
from pipeline import HallucinationDetector
from report_renderer import FORMATS
from synthetic import FROZEN_SPECS, REGIMES

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARTIAL_INGEST = 2
EXIT_DOMAIN = 3
EXIT_TRAINING_DATA = 4
EXIT_METRIC = 5
EXIT_NETWORK = 6


def _k_list(text: str):
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Flat key = value config file overriding config/config.json')
    common.add_argument('--seed', type=int, help='Seed for splits, bootstrap, training and synthesis')
    common.add_argument('--k', type=int, help='Number of exposed top-K candidates (ingest, synth)')
    common.add_argument('--api-key-env', help='Environment variable holding the judge API key '
                                              '(default: JUDGE_API_KEY)')
    common.add_argument('--n-jobs', type=int, help='Parallel workers for scoring and bootstrap')

    parser = argparse.ArgumentParser(description='Hallucination detection from top-K token log-probabilities')
    commands = parser.add_subparsers(dest='command', required=True)

    ingest = commands.add_parser('ingest', parents=[common], help='Parse raw API responses into a dataset')
    ingest.add_argument('--input', required=True, help='Response file or directory of .json/.jsonl files')
    ingest.add_argument('--output', required=True, help='Dataset JSONL to write')
    ingest.add_argument('--label', type=int, choices=[0, 1], help='Label stamped on every ingested record')
    ingest.add_argument('--label-source', choices=[s for s in LABEL_SOURCES if s != 'unlabeled'],
                        help='Label source for --label (default: manual)')

    annotate = commands.add_parser('annotate', parents=[common], help='Label a dataset with a judge')
    annotate.add_argument('--input', required=True)
    annotate.add_argument('--output', required=True)
    annotate.add_argument('--judge', choices=JUDGE_MODES, help='Judge to use (default from config)')

    score = commands.add_parser('score', parents=[common], help='Append EPR (and WEPR) scores to a dataset')
    score.add_argument('--input', required=True)
    score.add_argument('--output', required=True)
    score.add_argument('--model', help='WEPR model file; without it only EPR is emitted')
    score.add_argument('--diagnostics', action='store_true', help='Add tail bounds and sufficiency ratio')
    score.add_argument('--threshold', type=float, help='Token flag threshold')

    train = commands.add_parser('train', parents=[common], help='Train WEPR weights on the train split')
    train.add_argument('--input', required=True)
    train.add_argument('--model', required=True, help='Model file to write')
    train.add_argument('--epochs', type=int)
    train.add_argument('--l2', type=float, help='l2 penalty on beta_1..K')

    evaluate = commands.add_parser('eval', parents=[common], help='EPR baseline vs WEPR on the test split')
    evaluate.add_argument('--input', required=True)
    evaluate.add_argument('--model', required=True)
    evaluate.add_argument('--output', required=True, help='Report JSON to write')
    evaluate.add_argument('--csv', help='Optional CSV copy of the report')
    evaluate.add_argument('--plot', help='Optional ROC figure')
    evaluate.add_argument('--iterations', type=int, help='Bootstrap iterations')
    evaluate.add_argument('--no-split', action='store_true', help='Evaluate on the whole dataset')

    sweep = commands.add_parser('sweep-k', parents=[common], help='Retrain and evaluate WEPR for several K')
    sweep.add_argument('--input', required=True)
    sweep.add_argument('--output', required=True, help='CSV to write')
    sweep.add_argument('--k-values', type=_k_list, help='Comma-separated K values, e.g. 1,2,5,10,15')
    sweep.add_argument('--plot', help='Optional PR-AUC vs K figure')
    sweep.add_argument('--iterations', type=int, help='Bootstrap iterations')

    flag = commands.add_parser('flag', parents=[common], help='Render token flags of a scored dataset')
    flag.add_argument('--input', required=True, help='Scored JSONL (score --model)')
    flag.add_argument('--output', help='Report file (default: stdout)')
    flag.add_argument('--format', choices=FORMATS)
    flag.add_argument('--threshold', type=float)

    synth = commands.add_parser('synth', parents=[common], help='Generate a synthetic labeled dataset')
    synth.add_argument('--output', required=True)
    synth.add_argument('--preset', choices=sorted(FROZEN_SPECS), help='Use a frozen generator configuration')
    synth.add_argument('--regime', choices=REGIMES)
    synth.add_argument('--separation', type=float)
    synth.add_argument('--n-queries', type=int)
    synth.add_argument('--answers-per-query', type=int)

    return parser


def cli_overrides(args: argparse.Namespace) -> dict:
    """Command-line values as config sections; None entries are ignored by the merge."""
    def get(name):
        return getattr(args, name, None)

    return {
        'generation': {'top_k_exposed': get('k')},
        'training': {'seed': get('seed'), 'epochs': get('epochs'), 'l2_penalty': get('l2')},
        'evaluation': {
            'split_seed': get('seed'),
            'bootstrap_seed': get('seed'),
            'bootstrap_iterations': get('iterations'),
            'k_values': get('k_values'),
            'n_jobs': get('n_jobs'),
        },
        'synthetic': {
            'seed': get('seed'),
            'k': get('k'),
            'regime': get('regime'),
            'separation': get('separation'),
            'n_queries': get('n_queries'),
            'answers_per_query': get('answers_per_query'),
        },
        'judge': {'mode': get('judge'), 'api_key_env_var': get('api_key_env')},
        'render': {'format': get('format'), 'threshold': get('threshold')},
    }


def run_command(detector: HallucinationDetector, args: argparse.Namespace) -> int:
    if args.command == 'ingest':
        summary = detector.ingest(args.input, args.output, label=args.label, label_source=args.label_source)
        if not summary['table'].empty:
            print(summary['table'].to_string(index=False))
        if summary['errors']:
            for error in summary['errors']:
                print(f"error: {error}", file=sys.stderr)
            return EXIT_PARTIAL_INGEST
        return EXIT_OK

    if args.command == 'annotate':
        summary = detector.annotate(args.input, args.output)
        logger.info(f"Annotation summary: {summary}")
        return EXIT_OK

    if args.command == 'score':
        detector.score(args.input, args.output, model_path=args.model, diagnostics=args.diagnostics)
        return EXIT_OK

    if args.command == 'train':
        summary = detector.train(args.input, args.model)
        logger.info(f"Training: final loss {summary['final_loss']:.6f} after {summary['epochs_run']} epochs, "
                    f"orientation {summary['orientation']}")
        return EXIT_OK

    if args.command == 'eval':
        summary = detector.evaluate(args.input, args.model, args.output, split=not args.no_split,
                                    csv_path=args.csv, plot_path=args.plot)
        print(f"EPR baseline  ROC-AUC {summary['epr_roc_auc']:.4f}  PR-AUC {summary['epr_pr_auc']:.4f}")
        print(f"WEPR          ROC-AUC {summary['wepr_roc_auc']:.4f}  PR-AUC {summary['wepr_pr_auc']:.4f}")
        return EXIT_OK

    if args.command == 'sweep-k':
        summary = detector.sweep(args.input, args.output, k_values=args.k_values, plot_path=args.plot)
        print(summary['table'].to_string(index=False))
        return EXIT_OK

    if args.command == 'flag':
        document = detector.flag(args.input, args.output)
        if not args.output:
            sys.stdout.write(document)
        return EXIT_OK

    if args.command == 'synth':
        spec = detector.synthetic_spec(args.preset)
        summary = detector.synth(args.output, spec)
        logger.info(f"Wrote {summary['records']} synthetic records ({summary['valid']} valid) to {args.output}")
        return EXIT_OK

    raise DomainError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    try:
        config = build_run_config(
            cli_overrides(args),
            config_file=args.config,
            input_path=getattr(args, 'input', None),
            output_path=getattr(args, 'output', None),
            model_path=getattr(args, 'model', None),
        )
        setup_logging(config.section('logging'))
        config.validate()
        return run_command(HallucinationDetector(config), args)
    except JudgeTransportError as e:
        logger.error(f"Judge endpoint failure: {e}")
        return EXIT_NETWORK
    except (DomainError, IngestError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_DOMAIN
    except (TrainError, SplitError) as e:
        logger.error(f"Cannot train: {e}")
        return EXIT_TRAINING_DATA
    except MetricError as e:
        logger.error(f"Metric failure: {e}")
        return EXIT_METRIC
    except (DetectorError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
