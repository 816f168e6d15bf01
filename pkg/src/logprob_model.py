"""
Data model for top-K log-probability traces.

Parses OpenAI-compatible chat-completion responses into SequenceRecords and
persists labeled examples as JSONL. Probabilities (not logprobs) are stored;
the conversion happens once, at ingest.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

try:
    from .exceptions import DomainError, IngestError
except ImportError:
    from exceptions import DomainError, IngestError

logger = logging.getLogger(__name__)

# Numerical slack allowed on the total exposed probability mass
MASS_EPSILON = 1e-9

# sampled_rank value for a sampled token that is not among the exposed candidates
OUTSIDE_TOP_K = None

LABEL_SOURCES = ('llm-judge', 'exact-match', 'manual', 'synthetic', 'missing-context', 'unlabeled')


@dataclass(frozen=True)
class GenerationSettings:
    """Decoding settings the trace was produced with."""
    top_k_exposed: int
    sampling_temperature: float = 1.0
    sampling_top_k: Optional[int] = None
    vocab_size: Optional[int] = None
    top_p: float = 1.0

    def __post_init__(self):
        if int(self.top_k_exposed) != self.top_k_exposed or self.top_k_exposed < 1:
            raise DomainError(f"top_k_exposed must be an integer >= 1, got {self.top_k_exposed}")
        if not self.sampling_temperature > 0:
            raise DomainError("sampling_temperature must be > 0 (non-greedy decoding is required)")
        if not 0.0 < self.top_p <= 1.0:
            raise DomainError(f"top_p must lie in (0, 1], got {self.top_p}")
        if self.sampling_top_k is not None and self.sampling_top_k < self.top_k_exposed:
            raise DomainError(
                f"sampling_top_k ({self.sampling_top_k}) must be >= top_k_exposed ({self.top_k_exposed})")
        if self.vocab_size is not None:
            if self.vocab_size <= self.top_k_exposed:
                raise DomainError(f"vocab_size ({self.vocab_size}) must exceed top_k_exposed")
            if self.sampling_top_k is not None and self.vocab_size < self.sampling_top_k:
                raise DomainError(f"vocab_size ({self.vocab_size}) must be >= sampling_top_k")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'temperature': self.sampling_temperature,
            'top_k_exposed': self.top_k_exposed,
            'sampling_top_k': self.sampling_top_k,
            'vocab_size': self.vocab_size,
            'top_p': self.top_p,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GenerationSettings':
        return cls(
            top_k_exposed=int(data['top_k_exposed']),
            sampling_temperature=float(data.get('temperature', 1.0)),
            sampling_top_k=data.get('sampling_top_k'),
            vocab_size=data.get('vocab_size'),
            top_p=float(data.get('top_p', 1.0)),
        )


@dataclass(frozen=True)
class TokenDistribution:
    """Ranked top-K candidates of one generation step."""
    step_index: int
    candidates: Tuple[Tuple[str, float], ...]
    sampled_rank: Optional[int] = OUTSIDE_TOP_K
    sampled_token: Optional[str] = None

    def __post_init__(self):
        if self.step_index < 1:
            raise DomainError(f"step_index must be >= 1, got {self.step_index}")
        if len(self.candidates) < 1:
            raise DomainError(f"step {self.step_index}: no candidates")
        previous = math.inf
        for token, probability in self.candidates:
            if not 0.0 < probability <= 1.0:
                raise DomainError(f"step {self.step_index}: probability {probability!r} of {token!r} not in (0, 1]")
            if probability > previous:
                raise DomainError(f"step {self.step_index}: candidates are not sorted by probability")
            previous = probability
        if math.fsum(self.probabilities) > 1.0 + MASS_EPSILON:
            raise DomainError(f"step {self.step_index}: probability mass > 1")
        if self.sampled_rank is not None and not 1 <= self.sampled_rank <= len(self.candidates):
            raise DomainError(f"step {self.step_index}: sampled_rank {self.sampled_rank} out of range")

    @property
    def probabilities(self) -> Tuple[float, ...]:
        return tuple(p for _, p in self.candidates)

    @property
    def token_text(self) -> str:
        """Text of the generated token, falling back to the ranked candidates."""
        if self.sampled_token is not None:
            return self.sampled_token
        rank = self.sampled_rank if self.sampled_rank is not None else 1
        return self.candidates[rank - 1][0]


@dataclass(frozen=True)
class SequenceRecord:
    """A query's generated answer with its per-step distributions."""
    query_id: str
    query_text: str
    answer_text: str
    steps: Tuple[TokenDistribution, ...]
    settings: GenerationSettings

    def __post_init__(self):
        if len(self.steps) < 1:
            raise DomainError(f"{self.query_id}: a record needs at least one step")
        for expected, step in enumerate(self.steps, start=1):
            if step.step_index != expected:
                raise DomainError(f"{self.query_id}: step indices must be contiguous from 1")
            if len(step.candidates) > self.settings.top_k_exposed:
                raise DomainError(
                    f"{self.query_id}: step {expected} exposes {len(step.candidates)} candidates, "
                    f"more than K={self.settings.top_k_exposed}")

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def tokens(self) -> List[str]:
        return [step.token_text for step in self.steps]


@dataclass(frozen=True)
class LabeledExample:
    """A SequenceRecord with its sequence-level label (1 = valid, 0 = hallucinated)."""
    record: SequenceRecord
    label: Optional[int]
    label_source: str = 'manual'
    gold_answer: Optional[str] = None
    aliases: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.label_source not in LABEL_SOURCES:
            raise DomainError(f"unknown label_source {self.label_source!r}")
        if self.label is None:
            if self.label_source != 'unlabeled':
                raise DomainError("a null label requires label_source 'unlabeled'")
        elif type(self.label) is not int or self.label not in (0, 1):
            raise DomainError(f"label must be 0 or 1, got {self.label!r}")

    @property
    def query_id(self) -> str:
        return self.record.query_id

    @property
    def is_labeled(self) -> bool:
        return self.label is not None


def _candidate_probability(token: str, logprob: Any, step_index: int) -> float:
    try:
        value = float(logprob)
    except (TypeError, ValueError):
        raise IngestError(f"step {step_index}: logprob of {token!r} is not a number") from None
    if not math.isfinite(value):
        raise IngestError(f"step {step_index}: non-finite logprob {logprob!r} for {token!r}")
    return math.exp(value)


def _parse_step(entry: Dict[str, Any], step_index: int, k: int) -> TokenDistribution:
    if not isinstance(entry, dict) or 'token' not in entry or 'logprob' not in entry:
        raise IngestError(f"step {step_index}: entry lacks token/logprob")
    sampled_token = entry['token']
    sampled_probability = _candidate_probability(sampled_token, entry['logprob'], step_index)

    raw_top = entry.get('top_logprobs') or []
    if not raw_top:
        logger.warning(f"step {step_index}: empty top_logprobs, using the sampled token alone")
        raw_top = [{'token': sampled_token, 'logprob': entry['logprob']}]

    candidates = []
    if not isinstance(raw_top, list):
        raise IngestError(f"step {step_index}: top_logprobs is not a list")
    for item in raw_top:
        if not isinstance(item, dict) or 'token' not in item or 'logprob' not in item:
            raise IngestError(f"step {step_index}: malformed top_logprobs entry")
        token = item['token']
        probability = _candidate_probability(token, item['logprob'], step_index)
        if probability == 0.0:
            logger.warning(f"step {step_index}: dropping zero-probability candidate {token!r}")
            continue
        candidates.append((token, probability))

    if not candidates:
        if sampled_probability == 0.0:
            raise IngestError(f"step {step_index}: every candidate underflowed to probability 0")
        candidates = [(sampled_token, sampled_probability)]

    if math.fsum(p for _, p in candidates) > 1.0 + MASS_EPSILON:
        raise IngestError(f"step {step_index}: probability mass > 1")

    # sorted() is stable: tied candidates keep the upstream order
    candidates = sorted(candidates, key=lambda c: -c[1])
    if len(candidates) > k:
        logger.warning(f"step {step_index}: {len(candidates)} candidates exposed, truncating to K={k}")
        candidates = candidates[:k]

    sampled_rank = OUTSIDE_TOP_K
    for rank, (token, _) in enumerate(candidates, start=1):
        if token == sampled_token:
            sampled_rank = rank
            break

    return TokenDistribution(
        step_index=step_index,
        candidates=tuple(candidates),
        sampled_rank=sampled_rank,
        sampled_token=sampled_token,
    )


def parse_completion_response(raw: Union[str, bytes, Dict[str, Any]],
                              settings: GenerationSettings,
                              query_id: str = '',
                              query_text: str = '') -> SequenceRecord:
    """Parse an OpenAI-compatible chat-completions response into a SequenceRecord."""
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as e:
            raise IngestError(f"response is not valid JSON: {e}") from None

    try:
        choice = raw['choices'][0]
    except (KeyError, IndexError, TypeError):
        raise IngestError("response has no choices[0]") from None

    logprobs = choice.get('logprobs')
    if not isinstance(logprobs, dict) or not logprobs.get('content'):
        raise IngestError("logprobs absent")

    steps = tuple(
        _parse_step(entry, step_index, settings.top_k_exposed)
        for step_index, entry in enumerate(logprobs['content'], start=1)
    )

    message = choice.get('message') or {}
    answer_text = message.get('content')
    if answer_text is None:
        answer_text = ''.join(step.sampled_token or '' for step in steps)

    try:
        return SequenceRecord(
            query_id=query_id,
            query_text=query_text,
            answer_text=answer_text,
            steps=steps,
            settings=settings,
        )
    except DomainError as e:
        raise IngestError(str(e)) from None


# --- JSONL persistence ---

_REQUIRED_FIELDS = ('query_id', 'query', 'answer', 'label', 'label_source', 'settings', 'steps')


def answer_hash(answer_text: str) -> str:
    return hashlib.sha1(answer_text.encode('utf-8')).hexdigest()


def example_to_dict(example: LabeledExample) -> Dict[str, Any]:
    """Serialise one example to the dataset JSONL schema."""
    record = example.record
    data: Dict[str, Any] = {
        'query_id': record.query_id,
        'query': record.query_text,
        'answer': record.answer_text,
        'label': example.label,
        'label_source': example.label_source,
        'settings': record.settings.to_dict(),
        'steps': [[[token, p] for token, p in step.candidates] for step in record.steps],
        'sampled_ranks': [step.sampled_rank for step in record.steps],
    }
    if any(step.sampled_token is not None for step in record.steps):
        data['tokens'] = [step.sampled_token for step in record.steps]
    if example.gold_answer is not None:
        data['gold_answer'] = example.gold_answer
    if example.aliases:
        data['aliases'] = list(example.aliases)
    return data


def example_from_dict(data: Dict[str, Any]) -> LabeledExample:
    """Build a LabeledExample from a decoded JSONL object (no line context)."""
    for name in _REQUIRED_FIELDS:
        if name not in data:
            raise IngestError(f"missing field {name}")

    settings = GenerationSettings.from_dict(data['settings'])
    raw_steps = data['steps']
    sampled_ranks = data.get('sampled_ranks') or [OUTSIDE_TOP_K] * len(raw_steps)
    tokens = data.get('tokens') or [None] * len(raw_steps)
    if len(sampled_ranks) != len(raw_steps) or len(tokens) != len(raw_steps):
        raise IngestError("sampled_ranks/tokens length differs from steps")

    steps = tuple(
        TokenDistribution(
            step_index=index,
            candidates=tuple((str(token), float(p)) for token, p in candidates),
            sampled_rank=rank,
            sampled_token=token_text,
        )
        for index, (candidates, rank, token_text) in enumerate(zip(raw_steps, sampled_ranks, tokens), start=1)
    )
    record = SequenceRecord(
        query_id=str(data['query_id']),
        query_text=data['query'],
        answer_text=data['answer'],
        steps=steps,
        settings=settings,
    )
    return LabeledExample(
        record=record,
        label=data['label'],
        label_source=data['label_source'],
        gold_answer=data.get('gold_answer'),
        aliases=tuple(data.get('aliases') or ()),
    )


def dumps_line(data: Dict[str, Any]) -> str:
    """Byte-stable JSON: sorted keys, shortest round-trip float repr."""
    return json.dumps(data, ensure_ascii=False, sort_keys=True, allow_nan=False)


def read_jsonl_dataset(path: str) -> List[LabeledExample]:
    """Read a dataset JSONL file, validating every line."""
    examples = []
    seen = set()
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                if not isinstance(data, dict):
                    raise IngestError("expected a JSON object")
                example = example_from_dict(data)
            except json.JSONDecodeError as e:
                raise IngestError(f"line {line_number}: invalid JSON ({e.msg})") from None
            except (IngestError, DomainError) as e:
                raise IngestError(f"line {line_number}: {e}") from None
            except (KeyError, TypeError, ValueError) as e:
                raise IngestError(f"line {line_number}: malformed record ({e})") from None

            key = (example.query_id, answer_hash(example.record.answer_text))
            if key in seen:
                logger.warning(f"line {line_number}: duplicate record for query {example.query_id!r}, kept")
            seen.add(key)
            examples.append(example)

    logger.info(f"Read {len(examples)} examples from {path}")
    return examples


def write_jsonl_dataset(examples: Iterable[LabeledExample], path: str) -> None:
    """Write examples one JSON object per line."""
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for example in examples:
            f.write(dumps_line(example_to_dict(example)) + '\n')


def read_jsonl_objects(path: str) -> List[Dict[str, Any]]:
    """Read raw JSON objects (e.g. scored output) without model validation."""
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


def write_jsonl_objects(objects: Sequence[Dict[str, Any]], path: str) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for data in objects:
            f.write(dumps_line(data) + '\n')
