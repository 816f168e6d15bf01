"""
Synthetic labeled datasets with known structure, standing in for LLM + judge data.

Two regimes:

* ``plain``: every step is a sorted draw from a symmetric Dirichlet over
  SAMPLING_SLOTS tokens. Valid answers use a low concentration (peaked steps),
  hallucinated answers a high one. ``separation`` sets the log-ratio of the two.
* ``rank-structured``: each step puts 1 - r on rank 1 and splits r between
  rank 2 and a geometric tail. The confidence level r varies per sequence and is
  independent of the label, so mean entropy is confounded by it. The label moves
  the rank-2 share and the tail shape, which a per-rank weighting can separate
  from r while a uniform weighting cannot.
"""

import logging
import sys
from dataclasses import asdict, dataclass
from typing import Dict, List, Tuple

import numpy as np
from tqdm import tqdm

try:
    from .exceptions import DomainError
    from .logprob_model import GenerationSettings, LabeledExample, SequenceRecord, TokenDistribution
except ImportError:
    from exceptions import DomainError
    from logprob_model import GenerationSettings, LabeledExample, SequenceRecord, TokenDistribution

logger = logging.getLogger(__name__)

REGIMES = ('plain', 'rank-structured')

# Tokens with non-zero probability at each step (the sampling top-k)
SAMPLING_SLOTS = 50

# Share of answers labeled valid
VALID_FRACTION = 0.6

# plain regime: Dirichlet concentration at separation 0
BASE_CONCENTRATION = 0.1

# rank-structured regime
CONFIDENCE_RANGE = (0.1, 0.5)
CONFIDENCE_JITTER = 0.02
SPLIT_SHIFT_PER_SEPARATION = 0.075
SPLIT_SPREAD = 0.25
SPLIT_JITTER = 0.05
TAIL_DECAY_CENTER = 0.75
TAIL_DECAY_SHIFT_PER_SEPARATION = 0.075


@dataclass(frozen=True)
class SyntheticSpec:
    n_queries: int = 500
    answers_per_query: int = 2
    length_range: Tuple[int, int] = (20, 40)
    k: int = 15
    regime: str = 'plain'
    separation: float = 2.0
    seed: int = 7

    def __post_init__(self):
        if self.n_queries < 1 or self.answers_per_query < 1:
            raise DomainError("n_queries and answers_per_query must be >= 1")
        low, high = self.length_range
        if low < 1 or high < low:
            raise DomainError(f"invalid length_range {self.length_range}")
        if not 1 <= self.k <= SAMPLING_SLOTS:
            raise DomainError(f"k must lie in [1, {SAMPLING_SLOTS}], got {self.k}")
        if self.regime not in REGIMES:
            raise DomainError(f"unknown regime {self.regime!r}, expected one of {REGIMES}")
        if self.separation < 0:
            raise DomainError("separation must be >= 0")

    @classmethod
    def from_dict(cls, data: Dict) -> 'SyntheticSpec':
        return cls(
            n_queries=int(data.get('n_queries', 500)),
            answers_per_query=int(data.get('answers_per_query', 2)),
            length_range=(int(data.get('min_length', 20)), int(data.get('max_length', 40))),
            k=int(data.get('k', 15)),
            regime=data.get('regime', 'plain'),
            separation=float(data.get('separation', 2.0)),
            seed=int(data.get('seed', 7)),
        )

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['length_range'] = list(self.length_range)
        return data


# Calibrated once against the separability targets; do not retune
FROZEN_SPECS: Dict[str, SyntheticSpec] = {
    'plain': SyntheticSpec(regime='plain', separation=2.0, seed=7),
    'rank-structured': SyntheticSpec(regime='rank-structured', separation=2.0, seed=11),
}


def _plain_steps(rng: np.random.Generator, length: int, label: int, separation: float) -> np.ndarray:
    sign = -1.0 if label == 1 else 1.0
    alpha = BASE_CONCENTRATION * np.exp(sign * separation / 2.0)
    draws = rng.standard_gamma(alpha, size=(length, SAMPLING_SLOTS))
    return draws / draws.sum(axis=1, keepdims=True)


def _rank_structured_steps(rng: np.random.Generator, length: int, label: int, separation: float) -> np.ndarray:
    sign = 1.0 if label == 1 else -1.0
    confidence = rng.uniform(*CONFIDENCE_RANGE)
    split_center = 0.5 + sign * SPLIT_SHIFT_PER_SEPARATION * separation
    split = rng.uniform(split_center - SPLIT_SPREAD, split_center + SPLIT_SPREAD)
    decay = float(np.clip(TAIL_DECAY_CENTER - sign * TAIL_DECAY_SHIFT_PER_SEPARATION * separation, 0.3, 0.95))

    r = np.clip(confidence + rng.uniform(-CONFIDENCE_JITTER, CONFIDENCE_JITTER, size=length), 0.05, 0.6)
    f = np.clip(split + rng.uniform(-SPLIT_JITTER, SPLIT_JITTER, size=length), 0.02, 0.98)

    tail_shape = decay ** np.arange(SAMPLING_SLOTS - 2)
    tail_shape /= tail_shape.sum()

    probs = np.empty((length, SAMPLING_SLOTS))
    probs[:, 0] = 1.0 - r
    probs[:, 1] = f * r
    probs[:, 2:] = ((1.0 - f) * r)[:, None] * tail_shape[None, :]
    return probs


def _build_record(rng: np.random.Generator, probs: np.ndarray, query_id: str, query_text: str,
                  settings: GenerationSettings) -> SequenceRecord:
    """Rank each step, sample a token and expose the top K candidates."""
    length = probs.shape[0]
    names = np.argsort(rng.random((length, SAMPLING_SLOTS)), axis=1)
    order = np.argsort(-probs, axis=1, kind='stable')
    ranked = np.take_along_axis(probs, order, axis=1)
    ranked_names = np.take_along_axis(names, order, axis=1)

    positive = (ranked > 0).sum(axis=1)
    draws = rng.random(length)
    sampled = np.minimum((np.cumsum(ranked, axis=1) < draws[:, None]).sum(axis=1), positive - 1)

    k = settings.top_k_exposed
    steps = []
    for j in range(length):
        exposed = min(k, int(positive[j]))
        candidates = tuple((f" t{ranked_names[j, i]}", float(ranked[j, i])) for i in range(exposed))
        index = int(sampled[j])
        steps.append(TokenDistribution(
            step_index=j + 1,
            candidates=candidates,
            sampled_rank=index + 1 if index < exposed else None,
            sampled_token=f" t{ranked_names[j, index]}",
        ))
    return SequenceRecord(
        query_id=query_id,
        query_text=query_text,
        answer_text=''.join(step.sampled_token for step in steps),
        steps=tuple(steps),
        settings=settings,
    )


def generate_synthetic(spec: SyntheticSpec) -> List[LabeledExample]:
    """Labeled examples for spec, deterministic in spec.seed."""
    rng = np.random.default_rng(spec.seed)
    settings = GenerationSettings(top_k_exposed=spec.k, sampling_temperature=1.0, sampling_top_k=SAMPLING_SLOTS)
    draw_steps = _plain_steps if spec.regime == 'plain' else _rank_structured_steps
    low, high = spec.length_range

    examples = []
    queries = tqdm(range(spec.n_queries), desc='Synthesizing', disable=not sys.stderr.isatty())
    for q in queries:
        query_id = f"q{q:05d}"
        query_text = f"synthetic query {q}"
        for _ in range(spec.answers_per_query):
            label = int(rng.random() < VALID_FRACTION)
            length = int(rng.integers(low, high + 1))
            probs = draw_steps(rng, length, label, spec.separation)
            record = _build_record(rng, probs, query_id, query_text, settings)
            examples.append(LabeledExample(record=record, label=label, label_source='synthetic'))

    n_valid = sum(e.label for e in examples)
    logger.info(f"Generated {len(examples)} {spec.regime} examples ({n_valid} valid, seed {spec.seed})")
    return examples
