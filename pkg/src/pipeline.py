"""
HallucinationDetector: one method per command, reading and writing the JSONL,
model and report artifacts. Library errors propagate to the caller.
"""

import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

try:
    from .config import RunConfig
    from .evaluator import (EPR_BASELINE, WEPR, compare_methods, grouped_split, method_scores,
                            profile_examples, reports_to_frame, roc_auc, roc_curve, sweep_k, sweep_to_frame)
    from .exceptions import DomainError, IngestError, TrainError
    from .judge_annotator import JudgeEndpoint, annotate_dataset
    from .logprob_model import (GenerationSettings, LabeledExample, example_to_dict, parse_completion_response,
                                read_jsonl_dataset, read_jsonl_objects, write_jsonl_dataset, write_jsonl_objects)
    from .report_renderer import render_report
    from .synthetic import FROZEN_SPECS, SyntheticSpec, generate_synthetic
    from .wepr import TrainConfig, WeprModel, coefficient_summary, load_model, save_model, score_sequence, train
except ImportError:
    from config import RunConfig
    from evaluator import (EPR_BASELINE, WEPR, compare_methods, grouped_split, method_scores,
                           profile_examples, reports_to_frame, roc_auc, roc_curve, sweep_k, sweep_to_frame)
    from exceptions import DomainError, IngestError, TrainError
    from judge_annotator import JudgeEndpoint, annotate_dataset
    from logprob_model import (GenerationSettings, LabeledExample, example_to_dict, parse_completion_response,
                               read_jsonl_dataset, read_jsonl_objects, write_jsonl_dataset, write_jsonl_objects)
    from report_renderer import render_report
    from synthetic import FROZEN_SPECS, SyntheticSpec, generate_synthetic
    from wepr import TrainConfig, WeprModel, coefficient_summary, load_model, save_model, score_sequence, train

logger = logging.getLogger(__name__)

INGEST_SUFFIXES = ('.json', '.jsonl')


def _write_json(data: Dict[str, Any], path: str) -> None:
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + '\n')


def _finite_or_marker(value: Optional[float]) -> Any:
    if value is not None and math.isinf(value):
        return 'inf'
    return value


def _training_log_path(model_path: str) -> str:
    root, _ = os.path.splitext(model_path)
    return f"{root}_training_log.json"


class HallucinationDetector:
    """Orchestrates ingest, annotation, scoring, training, evaluation and reporting."""

    def __init__(self, config: RunConfig):
        self.config = config

    # --- configuration views ---

    @property
    def generation_settings(self) -> GenerationSettings:
        return GenerationSettings.from_dict({
            **self.config.section('generation'),
            'temperature': self.config.section('generation').get('sampling_temperature', 1.0),
        })

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config.section('training'))

    @property
    def _eval(self) -> Dict[str, Any]:
        return self.config.section('evaluation')

    def _labeled(self, path: str) -> List[LabeledExample]:
        examples = read_jsonl_dataset(path)
        labeled = [e for e in examples if e.is_labeled]
        if len(labeled) < len(examples):
            logger.warning(f"Skipping {len(examples) - len(labeled)} unlabeled examples in {path}")
        return labeled

    # --- ingest ---

    def _ingest_items(self, path: Path) -> List[Tuple[str, Any]]:
        if path.suffix == '.jsonl':
            with open(path, 'r', encoding='utf-8') as f:
                return [(f"{path.stem}-{n}", line) for n, line in enumerate(f, start=1) if line.strip()]
        with open(path, 'r', encoding='utf-8') as f:
            return [(path.stem, f.read())]

    def _example_from_item(self, item_id: str, text: str, settings: GenerationSettings,
                           label: Optional[int], label_source: str) -> LabeledExample:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise IngestError(f"invalid JSON ({e.msg})") from None
        if not isinstance(data, dict):
            raise IngestError("expected a JSON object")

        if 'response' in data:
            record = parse_completion_response(data['response'], settings,
                                               query_id=str(data.get('query_id', item_id)),
                                               query_text=data.get('query', ''))
            gold_answer, aliases = data.get('gold_answer'), tuple(data.get('aliases') or ())
        else:
            record = parse_completion_response(data, settings, query_id=item_id)
            gold_answer, aliases = None, ()
        return LabeledExample(record=record, label=label, label_source=label_source,
                              gold_answer=gold_answer, aliases=aliases)

    def ingest(self, input_path: str, output_path: str, label: Optional[int] = None,
               label_source: Optional[str] = None) -> Dict[str, Any]:
        """Parse raw responses (a file or a directory of them) into a dataset JSONL."""
        source = Path(input_path)
        if source.is_dir():
            files = sorted(p for p in source.iterdir() if p.suffix in INGEST_SUFFIXES)
        else:
            files = [source]
        if not files:
            logger.warning(f"No response files found in {input_path}; writing an empty dataset")

        if label is None:
            label_source = 'unlabeled'
        else:
            label_source = label_source or 'manual'

        settings = self.generation_settings
        examples: List[LabeledExample] = []
        errors: List[str] = []
        rows = []
        for path in tqdm(files, desc='Ingesting', unit='file', disable=not sys.stderr.isatty()):
            file_examples = []
            try:
                items = self._ingest_items(path)
            except (OSError, UnicodeDecodeError) as e:
                items = []
                errors.append(f"{path.name}: unreadable ({e})")
                logger.error(f"Failed to read {path.name}: {e}")
            for item_id, text in items:
                try:
                    file_examples.append(self._example_from_item(item_id, text, settings, label, label_source))
                except (IngestError, DomainError, KeyError, TypeError, AttributeError) as e:
                    errors.append(f"{path.name} ({item_id}): {e}")
                    logger.error(f"Failed to ingest {path.name} ({item_id}): {e}")
            examples.extend(file_examples)
            rows.append({
                'file': path.name,
                'sequences': len(file_examples),
                'mean_length': float(np.mean([e.record.length for e in file_examples])) if file_examples else 0.0,
                'mean_k_exposed': float(np.mean([len(s.candidates) for e in file_examples
                                                 for s in e.record.steps])) if file_examples else 0.0,
            })

        write_jsonl_dataset(examples, output_path)
        logger.info(f"Ingested {len(examples)} sequences from {len(files)} files into {output_path}")
        return {
            'files': len(files),
            'records': len(examples),
            'errors': errors,
            'table': pd.DataFrame(rows, columns=['file', 'sequences', 'mean_length', 'mean_k_exposed']),
        }

    # --- annotate ---

    def annotate(self, input_path: str, output_path: str, mode: Optional[str] = None) -> Dict[str, Any]:
        judge = self.config.section('judge')
        mode = mode or judge.get('mode', 'exact-match')
        examples = read_jsonl_dataset(input_path)
        annotated, summary = annotate_dataset(
            examples,
            mode=mode,
            endpoint=JudgeEndpoint.from_dict(judge),
            max_concurrency=int(judge.get('max_concurrency', 4)),
        )
        write_jsonl_dataset(annotated, output_path)
        return {'records': len(annotated), 'mode': mode, **summary}

    # --- score ---

    def score_examples(self, examples: Sequence[LabeledExample], model: Optional[WeprModel] = None,
                       diagnostics: bool = False) -> List[Dict[str, Any]]:
        """Scored JSONL objects: the example plus epr, and the WEPR fields when a model is given."""
        threshold = self.config.section('render').get('threshold', 0.5)
        profiles = profile_examples(examples, n_jobs=int(self._eval.get('n_jobs', 1)))
        scored = []
        for example, profile in zip(examples, profiles):
            data = example_to_dict(example)
            data['epr'] = profile.epr
            if model is not None:
                score = score_sequence(model, profile, threshold)
                data.update({
                    'wepr': score.wepr,
                    'validity_probability': score.validity_probability,
                    'token_scores': list(score.token_scores),
                    'orientation': score.orientation,
                    'tokens': example.record.tokens,
                })
            if diagnostics:
                data['diagnostics'] = {k: _finite_or_marker(v) for k, v in profile.diagnostics().items()}
            scored.append(data)
        return scored

    def score(self, input_path: str, output_path: str, model_path: Optional[str] = None,
              diagnostics: bool = False) -> Dict[str, Any]:
        examples = read_jsonl_dataset(input_path)
        model = load_model(model_path) if model_path else None
        scored = self.score_examples(examples, model, diagnostics)
        write_jsonl_objects(scored, output_path)
        logger.info(f"Scored {len(scored)} records into {output_path}")
        return {'records': len(scored), 'model': model_path}

    # --- train ---

    def train(self, input_path: str, model_path: str) -> Dict[str, Any]:
        """Grouped split, then fit WEPR on the train side only."""
        examples = self._labeled(input_path)
        if not examples:
            raise TrainError("degenerate labels: no labeled examples")
        seed = int(self._eval.get('split_seed', 42))
        fraction = float(self._eval.get('test_fraction', 0.3))
        plan = grouped_split(examples, test_fraction=fraction, seed=seed)
        train_side, _ = plan.partition(examples)

        profiles = profile_examples(train_side, n_jobs=int(self._eval.get('n_jobs', 1)))
        model = train(list(zip(profiles, [e.label for e in train_side])), self.train_config)
        meta = dict(model.training_meta, split=plan.to_dict())
        model = WeprModel(k=model.k, bias=model.bias, weights=model.weights,
                          orientation=model.orientation, training_meta=meta)
        save_model(model, model_path)

        coefficients = coefficient_summary(model)
        if coefficients['rank2_opposite_sign']:
            logger.info("Rank-2 weight has the opposite sign to the other ranks")
        log = {
            'initial_loss': meta['initial_loss'],
            'final_loss': meta['final_loss'],
            'epochs_run': meta['epochs_run'],
            'converged': meta['converged'],
            'orientation': model.orientation,
            'coefficients': coefficients,
            'split': plan.to_dict(),
        }
        log_path = _training_log_path(model_path)
        _write_json(log, log_path)
        return {'model': model_path, 'training_log': log_path, **log}

    # --- evaluate ---

    def evaluate(self, input_path: str, model_path: str, output_path: str, split: bool = True,
                 csv_path: Optional[str] = None, plot_path: Optional[str] = None) -> Dict[str, Any]:
        """
        EPR baseline vs WEPR on the test side of the grouped split, or on the whole
        dataset with split=False (a model trained elsewhere).
        """
        examples = self._labeled(input_path)
        model = load_model(model_path)
        if split:
            seed = int(self._eval.get('split_seed', 42))
            fraction = float(self._eval.get('test_fraction', 0.3))
            trained_on = model.training_meta.get('split')
            if trained_on and (trained_on.get('seed'), trained_on.get('test_fraction')) != (seed, fraction):
                logger.warning(f"Model was trained with split {trained_on}, evaluating with seed {seed}, "
                               f"fraction {fraction}")
            plan = grouped_split(examples, test_fraction=fraction, seed=seed)
            _, test_side = plan.partition(examples)
            split_info: Dict[str, Any] = plan.to_dict()
        else:
            test_side = examples
            split_info = {'mode': 'transfer'}

        iterations = int(self._eval.get('bootstrap_iterations', 1000))
        bootstrap_seed = int(self._eval.get('bootstrap_seed', 42))
        n_jobs = int(self._eval.get('n_jobs', 1))
        epr_report, wepr_report = compare_methods(test_side, model, iterations=iterations,
                                                  seed=bootstrap_seed, n_jobs=n_jobs)

        report = {
            EPR_BASELINE: epr_report.to_dict(),
            WEPR: wepr_report.to_dict(),
            'split': split_info,
            'model': {'k': model.k, 'orientation': model.orientation},
            'n_test': len(test_side),
        }
        _write_json(report, output_path)
        if csv_path:
            reports_to_frame([epr_report, wepr_report]).to_csv(csv_path, index=False)
        if plot_path:
            self._plot_roc(test_side, model, plot_path)
        return {
            'report': output_path,
            'epr_roc_auc': epr_report.roc_auc,
            'wepr_roc_auc': wepr_report.roc_auc,
            'epr_pr_auc': epr_report.pr_auc,
            'wepr_pr_auc': wepr_report.pr_auc,
        }

    def _plot_roc(self, examples: Sequence[LabeledExample], model: WeprModel, path: str) -> None:
        try:
            from .plotting import plot_roc_curves
        except ImportError:
            from plotting import plot_roc_curves
        labels = np.array([e.label for e in examples])
        epr_scores, wepr_scores = method_scores(profile_examples(examples), model)
        curves = {}
        for name, scores in ((EPR_BASELINE, epr_scores), (WEPR, wepr_scores)):
            fpr, tpr, _ = roc_curve(scores, labels)
            curves[name] = (fpr, tpr, roc_auc(scores, labels))
        plot_roc_curves(curves, path)

    # --- sweep ---

    def sweep(self, input_path: str, output_path: str, k_values: Optional[Sequence[int]] = None,
              plot_path: Optional[str] = None) -> Dict[str, Any]:
        examples = self._labeled(input_path)
        rows = sweep_k(
            examples,
            k_values or self._eval.get('k_values', [1, 2, 5, 10, 15]),
            split_seed=int(self._eval.get('split_seed', 42)),
            test_fraction=float(self._eval.get('test_fraction', 0.3)),
            train_config=self.train_config,
            iterations=int(self._eval.get('bootstrap_iterations', 1000)),
            bootstrap_seed=int(self._eval.get('bootstrap_seed', 42)),
            n_jobs=int(self._eval.get('n_jobs', 1)),
        )
        frame = sweep_to_frame(rows)
        os.makedirs(os.path.dirname(output_path) or '.', exist_ok=True)
        frame.to_csv(output_path, index=False)
        if plot_path:
            try:
                from .plotting import plot_k_sweep
            except ImportError:
                from plotting import plot_k_sweep
            plot_k_sweep(rows, plot_path)
        return {'csv': output_path, 'rows': len(rows), 'table': frame}

    # --- flag ---

    def flag(self, input_path: str, output_path: Optional[str] = None, fmt: Optional[str] = None,
             threshold: Optional[float] = None) -> str:
        render = self.config.section('render')
        fmt = fmt or render.get('format', 'ansi')
        threshold = threshold if threshold is not None else render.get('threshold', 0.5)
        document = render_report(read_jsonl_objects(input_path), fmt=fmt, threshold=threshold)
        if output_path:
            with open(output_path, 'w', encoding='utf-8', newline='\n') as f:
                f.write(document)
        return document

    # --- synth ---

    def synthetic_spec(self, preset: Optional[str] = None) -> SyntheticSpec:
        if preset is not None:
            if preset not in FROZEN_SPECS:
                raise DomainError(f"unknown preset {preset!r}, expected one of {sorted(FROZEN_SPECS)}")
            return FROZEN_SPECS[preset]
        return SyntheticSpec.from_dict(self.config.section('synthetic'))

    def synth(self, output_path: str, spec: SyntheticSpec) -> Dict[str, Any]:
        examples = generate_synthetic(spec)
        write_jsonl_dataset(examples, output_path)
        return {'records': len(examples), 'valid': sum(e.label for e in examples), **spec.to_dict()}
