import os
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.evaluator import grouped_split, profile_examples
from src.logprob_model import GenerationSettings, LabeledExample, SequenceRecord, TokenDistribution
from src.synthetic import FROZEN_SPECS, SyntheticSpec, generate_synthetic
from src.wepr import TrainConfig, train

FIXTURES = Path(__file__).resolve().parent / 'fixtures'


@pytest.fixture(autouse=True)
def _in_tmp_dir(tmp_path, monkeypatch):
    # the CLI writes its log file relative to the working directory
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def make_record(steps_probs, k=None, query_id='q0', sampling_top_k=None, vocab_size=None):
    """SequenceRecord from a list of per-step probability lists (sorted descending)."""
    k = k or max(len(p) for p in steps_probs)
    settings = GenerationSettings(top_k_exposed=k, sampling_top_k=sampling_top_k, vocab_size=vocab_size)
    steps = tuple(
        TokenDistribution(
            step_index=j,
            candidates=tuple((f"w{j}_{i}", float(p)) for i, p in enumerate(probs)),
            sampled_rank=1,
        )
        for j, probs in enumerate(steps_probs, start=1)
    )
    return SequenceRecord(query_id=query_id, query_text=f"query {query_id}", answer_text='answer',
                          steps=steps, settings=settings)


def make_example(steps_probs, label=1, k=None, query_id='q0'):
    return LabeledExample(record=make_record(steps_probs, k=k, query_id=query_id), label=label,
                          label_source='manual')


def random_distribution(rng, k, tail_mass_max=0.5):
    """Sorted top-k probabilities with a random residual mass."""
    probs = np.sort(rng.dirichlet(np.ones(k)))[::-1] * (1.0 - rng.uniform(0.0, tail_mass_max))
    return [float(p) for p in probs]


@pytest.fixture(scope='session')
def plain_dataset():
    return generate_synthetic(FROZEN_SPECS['plain'])


@pytest.fixture(scope='session')
def rank_dataset():
    return generate_synthetic(FROZEN_SPECS['rank-structured'])


@pytest.fixture(scope='session')
def small_dataset():
    return generate_synthetic(SyntheticSpec(n_queries=30, answers_per_query=2, length_range=(5, 10),
                                            k=5, regime='plain', separation=2.0, seed=3))


def split_and_train(examples, config=None):
    """Train on the grouped train side; return (model, test examples)."""
    plan = grouped_split(examples, test_fraction=0.3, seed=42)
    train_side, test_side = plan.partition(examples)
    profiles = profile_examples(train_side)
    model = train(list(zip(profiles, [e.label for e in train_side])), config or TrainConfig())
    return model, test_side


@pytest.fixture(scope='session')
def plain_split_model(plain_dataset):
    return split_and_train(plain_dataset)


@pytest.fixture(scope='session')
def rank_split_model(rank_dataset):
    return split_and_train(rank_dataset)
