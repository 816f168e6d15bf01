import numpy as np
import pytest

from src.evaluator import roc_auc
from src.entropy_core import sequence_profile
from src.exceptions import DomainError
from src.logprob_model import example_to_dict
from src.synthetic import FROZEN_SPECS, SyntheticSpec, generate_synthetic


def test_shape_and_labels(small_dataset):
    assert len(small_dataset) == 30 * 2
    assert {e.label for e in small_dataset} == {0, 1}
    assert all(e.label_source == 'synthetic' for e in small_dataset)

    by_query = {}
    for example in small_dataset:
        by_query.setdefault(example.query_id, []).append(example)
    assert len(by_query) == 30
    assert all(len(answers) == 2 for answers in by_query.values())


def test_steps_are_sorted_and_truncated(small_dataset):
    for example in small_dataset:
        record = example.record
        assert 5 <= record.length <= 10
        for step in record.steps:
            probs = step.probabilities
            assert len(probs) <= 5
            assert list(probs) == sorted(probs, reverse=True)
            if step.sampled_rank is not None:
                assert step.candidates[step.sampled_rank - 1][0] == step.sampled_token


def test_generation_is_deterministic():
    spec = SyntheticSpec(n_queries=10, length_range=(4, 8), k=6, regime='rank-structured', seed=21)
    first = [example_to_dict(e) for e in generate_synthetic(spec)]
    second = [example_to_dict(e) for e in generate_synthetic(spec)]
    assert first == second
    other = [example_to_dict(e) for e in generate_synthetic(SyntheticSpec(n_queries=10, length_range=(4, 8), k=6,
                                                                          regime='rank-structured', seed=22))]
    assert other != first


def test_plain_preset_is_separable_by_epr(plain_dataset):
    scores = [-sequence_profile(e.record).epr for e in plain_dataset]
    assert roc_auc(scores, [e.label for e in plain_dataset]) >= 0.9


def test_frozen_presets():
    assert FROZEN_SPECS['plain'].regime == 'plain'
    assert FROZEN_SPECS['rank-structured'].regime == 'rank-structured'
    assert FROZEN_SPECS['plain'].n_queries * FROZEN_SPECS['plain'].answers_per_query == 1000


def test_spec_dict_round_trip():
    spec = SyntheticSpec(n_queries=3, length_range=(2, 5), k=4, seed=1)
    data = spec.to_dict()
    assert data['length_range'] == [2, 5]
    rebuilt = SyntheticSpec.from_dict({**data, 'min_length': 2, 'max_length': 5})
    assert rebuilt == spec


@pytest.mark.parametrize('kwargs', [
    {'n_queries': 0},
    {'length_range': (5, 2)},
    {'k': 0},
    {'k': 51},
    {'regime': 'noisy'},
    {'separation': -1.0},
])
def test_invalid_spec(kwargs):
    with pytest.raises(DomainError):
        SyntheticSpec(**kwargs)


def test_rank_structured_confidence_is_label_independent(rank_dataset):
    top = {0: [], 1: []}
    for example in rank_dataset:
        top[example.label].append(np.mean([s.probabilities[0] for s in example.record.steps]))
    assert abs(np.mean(top[1]) - np.mean(top[0])) < 0.03
