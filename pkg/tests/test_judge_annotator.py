import threading
from dataclasses import replace

import pytest
import requests

import src.judge_annotator as judge_annotator
from conftest import make_example
from src.exceptions import DomainError, JudgeError, JudgeTransportError
from src.judge_annotator import (JUDGE_PROMPT_V1, JudgeEndpoint, JudgeTask, LlmJudge, annotate_dataset,
                                 judge_exact_match, judge_llm, judge_mock, normalize_answer, parse_verdict)


class FakeResponse:
    def __init__(self, content, status_code=200):
        self.content = content
        self.status_code = status_code

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"{self.status_code} error")

    def json(self):
        return {'choices': [{'message': {'role': 'assistant', 'content': self.content}}]}


class FakeEndpoint:
    """Records posts and replays canned replies in order."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = []

    def post(self, session, url, json=None, timeout=None, **kwargs):
        self.calls.append({'url': url, 'json': json, 'headers': dict(session.headers)})
        reply = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        if isinstance(reply, Exception):
            raise reply
        return FakeResponse(reply)


@pytest.fixture
def sleeps(monkeypatch):
    calls = []
    monkeypatch.setattr(judge_annotator.time, 'sleep', calls.append)
    return calls


@pytest.fixture
def fake_endpoint(monkeypatch):
    def install(replies):
        fake = FakeEndpoint(replies)

        def post(session, url, json=None, timeout=None, **kwargs):
            return fake.post(session, url, json=json, timeout=timeout, **kwargs)

        monkeypatch.setattr(requests.Session, 'post', post)
        return fake
    return install


TASK = JudgeTask(query_text='Capital of France?', generated_answer='It is Paris.', gold_answer='Paris')
ENDPOINT = JudgeEndpoint(base_url='http://judge.test/v1/', model_name='grader', max_retries=2, backoff_seconds=1.0)


@pytest.mark.parametrize('reply, expected', [
    ('TRUE', 1),
    ('false', 0),
    ('The answer is True.', 1),
    ('FALSE, because the capital is Paris', 0),
    ('untrue', None),
    ('maybe', None),
    ('', None),
])
def test_parse_verdict(reply, expected):
    assert parse_verdict(reply) == expected


def test_prompt_template():
    task = JudgeTask(query_text='Q?', generated_answer='A', gold_answer='G', aliases=('g1', 'g2'))
    assert task.prompt() == JUDGE_PROMPT_V1.format(q='Q?', gold='G', aliases='g1, g2', answer='A')
    assert 'Accepted aliases: none' in TASK.prompt()


def test_empty_gold_answer_is_rejected():
    with pytest.raises(DomainError):
        JudgeTask(query_text='q', generated_answer='a', gold_answer='  ')


def test_llm_judge_request(fake_endpoint, sleeps, monkeypatch):
    monkeypatch.setenv('JUDGE_API_KEY', 'secret')
    fake = fake_endpoint(['TRUE'])
    verdict = judge_llm(TASK, ENDPOINT)

    assert verdict.label == 1 and verdict.judge_kind == 'llm' and verdict.retries_used == 0
    call = fake.calls[0]
    assert call['url'] == 'http://judge.test/v1/chat/completions'
    assert call['json']['model'] == 'grader'
    assert call['json']['temperature'] == 0
    assert call['json']['messages'] == [{'role': 'user', 'content': TASK.prompt()}]
    assert call['headers']['Authorization'] == 'Bearer secret'
    assert sleeps == []


def test_llm_judge_without_key_sends_no_auth(fake_endpoint, sleeps, monkeypatch):
    monkeypatch.delenv('JUDGE_API_KEY', raising=False)
    fake = fake_endpoint(['FALSE'])
    assert judge_llm(TASK, ENDPOINT).label == 0
    assert 'Authorization' not in fake.calls[0]['headers']


def test_unparseable_replies_are_retried_with_backoff(fake_endpoint, sleeps):
    fake = fake_endpoint(['hmm', 'not sure', 'TRUE'])
    verdict = judge_llm(TASK, ENDPOINT)
    assert verdict.label == 1 and verdict.retries_used == 2
    assert len(fake.calls) == 3
    assert sleeps == [1.0, 2.0]


def test_exhausted_retries_raise_judge_error(fake_endpoint, sleeps):
    fake_endpoint(['maybe'])
    with pytest.raises(JudgeError) as info:
        judge_llm(TASK, ENDPOINT)
    assert not isinstance(info.value, JudgeTransportError)


def test_unreachable_endpoint_raises_transport_error(fake_endpoint, sleeps):
    fake = fake_endpoint([requests.ConnectionError('refused')])
    with pytest.raises(JudgeTransportError):
        judge_llm(TASK, ENDPOINT)
    assert len(fake.calls) == 3


def test_timeout_then_verdict(fake_endpoint, sleeps):
    fake_endpoint([requests.Timeout('slow'), 'TRUE'])
    assert judge_llm(TASK, ENDPOINT).label == 1


def test_each_thread_gets_its_own_session(fake_endpoint, sleeps, monkeypatch):
    monkeypatch.setenv('JUDGE_API_KEY', 'secret')
    fake = fake_endpoint(['TRUE'])
    client = LlmJudge(ENDPOINT)
    sessions = []

    def work():
        sessions.append(client.session)
        client.judge(TASK)

    threads = [threading.Thread(target=work) for _ in range(2)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()

    assert len(sessions) == 2 and sessions[0] is not sessions[1]
    assert client.session is client.session
    assert all(call['headers']['Authorization'] == 'Bearer secret' for call in fake.calls)


@pytest.mark.parametrize('answer, gold, aliases, expected', [
    ('It is Paris.', 'Paris', (), 1),
    ('paris', 'PARIS!', (), 1),
    ('Parisian food', 'Paris', (), 0),
    ('The city of light', 'Paris', ('city of light',), 1),
    ('London', 'Paris', ('Lutetia',), 0),
])
def test_exact_match(answer, gold, aliases, expected):
    task = JudgeTask(query_text='q', generated_answer=answer, gold_answer=gold, aliases=aliases)
    assert judge_exact_match(task).label == expected


def test_normalize_answer():
    assert normalize_answer('  The  Eiffel-Tower!\n') == 'the eiffeltower'


def test_mock_judge_goes_through_parser():
    assert judge_mock(TASK).label == 1
    assert judge_mock(TASK, reply=lambda task: 'I would say false').label == 0
    with pytest.raises(JudgeError):
        judge_mock(TASK, reply=lambda task: 'no idea')


def _examples():
    base = make_example([[0.6, 0.3]], query_id='q1')
    record = replace(base.record, query_text='Capital of France?', answer_text='Paris, of course')
    right = replace(base, record=record, gold_answer='Paris', label=None, label_source='unlabeled')
    wrong = replace(right, record=replace(record, query_id='q2', answer_text='Lyon'))
    no_gold = make_example([[0.6, 0.3]], label=1, query_id='q3')
    return [right, wrong, no_gold]


def test_annotate_exact_match_preserves_order():
    annotated, summary = annotate_dataset(_examples(), mode='exact-match')
    assert [e.query_id for e in annotated] == ['q1', 'q2', 'q3']
    assert [e.label for e in annotated] == [1, 0, 1]
    assert [e.label_source for e in annotated] == ['exact-match', 'exact-match', 'manual']
    assert summary == {'labeled': 2, 'unlabeled': 0, 'skipped': 1}


def test_annotate_llm_marks_unparseable_as_unlabeled(fake_endpoint, sleeps):
    fake_endpoint(['perhaps'])
    endpoint = JudgeEndpoint(base_url='http://judge.test/v1', max_retries=0)
    annotated, summary = annotate_dataset(_examples()[:2], mode='llm', endpoint=endpoint, max_concurrency=1)
    assert [e.label for e in annotated] == [None, None]
    assert all(e.label_source == 'unlabeled' for e in annotated)
    assert summary['unlabeled'] == 2


def test_annotate_llm_concurrently(fake_endpoint, sleeps):
    fake_endpoint(['TRUE'])
    annotated, summary = annotate_dataset(_examples(), mode='llm', endpoint=ENDPOINT, max_concurrency=2)
    assert [e.query_id for e in annotated] == ['q1', 'q2', 'q3']
    assert [e.label_source for e in annotated] == ['llm-judge', 'llm-judge', 'manual']
    assert summary == {'labeled': 2, 'unlabeled': 0, 'skipped': 1}


def test_annotate_aborts_on_transport_failure(fake_endpoint, sleeps):
    fake_endpoint([requests.ConnectionError('refused')])
    with pytest.raises(JudgeTransportError):
        annotate_dataset(_examples(), mode='llm', endpoint=ENDPOINT, max_concurrency=1)


def test_unknown_mode():
    with pytest.raises(DomainError):
        annotate_dataset([], mode='oracle')
