"""
Sequence-level labeling: an LLM-as-judge client for OpenAI-compatible
endpoints, plus offline exact-match and mock judges.
"""

import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import requests
from joblib import Parallel, delayed

try:
    from .exceptions import DomainError, JudgeError, JudgeTransportError
    from .logprob_model import LabeledExample
except ImportError:
    from exceptions import DomainError, JudgeError, JudgeTransportError
    from logprob_model import LabeledExample

logger = logging.getLogger(__name__)

JUDGE_PROMPT_VERSION = 'v1'

JUDGE_PROMPT_V1 = (
    "You are a strict grader. Question: {q}\n"
    "Reference answer: {gold}\n"
    "Accepted aliases: {aliases}\n"
    "Candidate answer: {answer}\n"
    "Reply with exactly one word: TRUE if the candidate is semantically correct, otherwise FALSE."
)

JUDGE_MODES = ('llm', 'exact-match', 'mock')

LABEL_SOURCE_BY_MODE = {
    'llm': 'llm-judge',
    'exact-match': 'exact-match',
    'mock': 'llm-judge',
}

_VERDICT_TOKEN = re.compile(r'\b(true|false)\b', re.IGNORECASE)
_PUNCTUATION = re.compile(r'[^\w\s]')
_WHITESPACE = re.compile(r'\s+')


@dataclass(frozen=True)
class JudgeTask:
    query_text: str
    generated_answer: str
    gold_answer: str
    aliases: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.gold_answer or not self.gold_answer.strip():
            raise DomainError("gold_answer must be non-empty")

    @classmethod
    def from_example(cls, example: LabeledExample) -> 'JudgeTask':
        return cls(
            query_text=example.record.query_text,
            generated_answer=example.record.answer_text,
            gold_answer=example.gold_answer or '',
            aliases=tuple(example.aliases),
        )

    def prompt(self) -> str:
        return JUDGE_PROMPT_V1.format(
            q=self.query_text,
            gold=self.gold_answer,
            aliases=', '.join(self.aliases) if self.aliases else 'none',
            answer=self.generated_answer,
        )


@dataclass(frozen=True)
class JudgeVerdict:
    label: int
    raw_response: str
    judge_kind: str
    retries_used: int = 0

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DomainError(f"verdict label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class JudgeEndpoint:
    base_url: str = 'http://localhost:8000/v1'
    model_name: str = 'judge'
    api_key_env_var: str = 'JUDGE_API_KEY'
    timeout: float = 30.0
    max_retries: int = 3
    backoff_seconds: float = 1.0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'JudgeEndpoint':
        return cls(
            base_url=data.get('base_url', cls.base_url),
            model_name=data.get('model_name', cls.model_name),
            api_key_env_var=data.get('api_key_env_var', cls.api_key_env_var),
            timeout=float(data.get('timeout', cls.timeout)),
            max_retries=int(data.get('max_retries', cls.max_retries)),
            backoff_seconds=float(data.get('backoff_seconds', cls.backoff_seconds)),
        )

    @property
    def url(self) -> str:
        return self.base_url.rstrip('/') + '/chat/completions'


def parse_verdict(reply: str) -> Optional[int]:
    """First standalone TRUE/FALSE token, case-insensitive; None when absent."""
    match = _VERDICT_TOKEN.search(reply or '')
    if match is None:
        return None
    return 1 if match.group(1).lower() == 'true' else 0


class LlmJudge:
    """
    Judge client for an OpenAI-compatible chat-completions endpoint.

    Without an explicit ``session`` every calling thread gets its own
    requests.Session.
    """

    def __init__(self, endpoint: JudgeEndpoint, session: Optional[requests.Session] = None):
        self.endpoint = endpoint
        self._shared_session = session
        self._local = threading.local()
        self.headers: Dict[str, str] = {}
        api_key = os.environ.get(endpoint.api_key_env_var)
        if api_key:
            self.headers['Authorization'] = f"Bearer {api_key}"
        else:
            logger.warning(f"{endpoint.api_key_env_var} is not set; calling {endpoint.url} without a key")
        if session is not None:
            session.headers.update(self.headers)

    @property
    def session(self) -> requests.Session:
        if self._shared_session is not None:
            return self._shared_session
        session = getattr(self._local, 'session', None)
        if session is None:
            session = requests.Session()
            session.headers.update(self.headers)
            self._local.session = session
        return session

    def _request(self, task: JudgeTask) -> str:
        payload = {
            'model': self.endpoint.model_name,
            'messages': [{'role': 'user', 'content': task.prompt()}],
            'temperature': 0,
        }
        response = self.session.post(self.endpoint.url, json=payload, timeout=self.endpoint.timeout)
        response.raise_for_status()
        return response.json()['choices'][0]['message']['content'] or ''

    def judge(self, task: JudgeTask) -> JudgeVerdict:
        attempts = 1 + self.endpoint.max_retries
        replies: List[str] = []
        last_error: Optional[Exception] = None

        for attempt in range(attempts):
            if attempt:
                time.sleep(self.endpoint.backoff_seconds * 2 ** (attempt - 1))
            try:
                reply = self._request(task)
            except requests.RequestException as e:
                last_error = e
                logger.warning(f"Judge request failed (attempt {attempt + 1}/{attempts}): {e}")
                continue
            except (ValueError, KeyError, IndexError, TypeError) as e:
                replies.append('')
                logger.warning(f"Malformed judge response (attempt {attempt + 1}/{attempts}): {e}")
                continue

            replies.append(reply)
            label = parse_verdict(reply)
            if label is not None:
                return JudgeVerdict(label=label, raw_response=reply, judge_kind='llm', retries_used=attempt)
            logger.warning(f"Unparseable judge reply (attempt {attempt + 1}/{attempts}): {reply[:80]!r}")

        if not replies:
            raise JudgeTransportError(f"judge endpoint {self.endpoint.url} unreachable "
                                      f"after {attempts} attempts: {last_error}")
        raise JudgeError(f"no TRUE/FALSE verdict after {attempts} attempts; last reply {replies[-1][:80]!r}")


def judge_llm(task: JudgeTask, endpoint: JudgeEndpoint,
              session: Optional[requests.Session] = None) -> JudgeVerdict:
    return LlmJudge(endpoint, session=session).judge(task)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    text = _PUNCTUATION.sub('', text.lower())
    return _WHITESPACE.sub(' ', text).strip()


def judge_exact_match(task: JudgeTask) -> JudgeVerdict:
    """Label 1 iff the normalized answer contains the normalized gold answer or an alias."""
    answer = f" {normalize_answer(task.generated_answer)} "
    for reference in (task.gold_answer, *task.aliases):
        needle = normalize_answer(reference)
        if needle and f" {needle} " in answer:
            return JudgeVerdict(label=1, raw_response=reference, judge_kind='exact-match')
    return JudgeVerdict(label=0, raw_response='', judge_kind='exact-match')


def judge_mock(task: JudgeTask, reply: Optional[Callable[[JudgeTask], str]] = None) -> JudgeVerdict:
    """
    Offline stand-in for the LLM judge.

    ``reply`` produces the upstream text for a task; by default the exact-match
    verdict is rendered as TRUE/FALSE. The text goes through the same parser as
    real replies.
    """
    if reply is None:
        text = 'TRUE' if judge_exact_match(task).label == 1 else 'FALSE'
    else:
        text = reply(task)
    label = parse_verdict(text)
    if label is None:
        raise JudgeError(f"mock reply {text[:80]!r} has no TRUE/FALSE verdict")
    return JudgeVerdict(label=label, raw_response=text, judge_kind='mock')


def _unlabeled(example: LabeledExample) -> LabeledExample:
    return replace(example, label=None, label_source='unlabeled')


def annotate_dataset(examples: Sequence[LabeledExample], mode: str = 'exact-match',
                     endpoint: Optional[JudgeEndpoint] = None, max_concurrency: int = 4,
                     session: Optional[requests.Session] = None) -> Tuple[List[LabeledExample], Dict[str, int]]:
    """
    Label every example with the chosen judge, preserving order and count.

    Examples the judge cannot label become label=None / 'unlabeled'. Examples
    without a gold answer keep whatever label they had. Transport failures abort
    the whole run.
    """
    if mode not in JUDGE_MODES:
        raise DomainError(f"unknown judge mode {mode!r}, expected one of {JUDGE_MODES}")

    if mode == 'llm':
        client = LlmJudge(endpoint or JudgeEndpoint(), session=session)
        judge_fn: Callable[[JudgeTask], JudgeVerdict] = client.judge
    elif mode == 'mock':
        judge_fn = judge_mock
    else:
        judge_fn = judge_exact_match

    def _annotate(example: LabeledExample) -> Tuple[LabeledExample, str]:
        if not example.gold_answer:
            return example, 'skipped'
        try:
            verdict = judge_fn(JudgeTask.from_example(example))
        except JudgeTransportError:
            raise
        except JudgeError as e:
            logger.warning(f"{example.query_id}: left unlabeled ({e})")
            return _unlabeled(example), 'unlabeled'
        return replace(example, label=verdict.label, label_source=LABEL_SOURCE_BY_MODE[mode]), 'labeled'

    if mode == 'llm' and max_concurrency > 1:
        results = Parallel(n_jobs=max_concurrency, prefer='threads')(delayed(_annotate)(e) for e in examples)
    else:
        results = [_annotate(e) for e in examples]

    summary = {'labeled': 0, 'unlabeled': 0, 'skipped': 0}
    for _, outcome in results:
        summary[outcome] += 1
    if summary['skipped']:
        logger.warning(f"{summary['skipped']} examples have no gold answer and were not judged")
    logger.info(f"Annotated {len(results)} examples with the {mode} judge: {summary}")
    return [example for example, _ in results], summary
