import json

import numpy as np
import pytest

from conftest import make_record
from src.entropy_core import sequence_profile
from src.evaluator import profile_examples
from src.exceptions import DomainError, TrainError
from src.wepr import (VALID_HIGH, VALID_LOW, SequenceScore, TrainConfig, WeprModel, coefficient_summary,
                      fit_features, flag_tokens, hallucination_scores, load_model, loss_and_gradient,
                      save_model, score_sequence, score_token, sigmoid, train)


def _numeric_gradient(model, batch, l2, loss_form, h=1e-6):
    theta = np.concatenate(([model.bias], model.weight_vector))
    gradient = np.empty_like(theta)
    for i in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        loss_up, _ = loss_and_gradient(WeprModel(k=model.k, bias=up[0], weights=tuple(up[1:])), batch, l2, loss_form)
        loss_down, _ = loss_and_gradient(WeprModel(k=model.k, bias=down[0], weights=tuple(down[1:])),
                                         batch, l2, loss_form)
        gradient[i] = (loss_up - loss_down) / (2 * h)
    return gradient


@pytest.mark.parametrize('loss_form', ['standard', 'literal'])
def test_gradient_matches_finite_differences(loss_form):
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = int(rng.integers(1, 8))
        model = WeprModel(k=k, bias=float(rng.normal()), weights=tuple(rng.normal(size=k)))
        n = int(rng.integers(1, 21))
        batch = [(rng.uniform(0.0, 0.6, size=k), int(rng.integers(0, 2))) for _ in range(n)]
        l2 = float(rng.choice([0.0, 0.01]))

        _, analytic = loss_and_gradient(model, batch, l2, loss_form)
        numeric = _numeric_gradient(model, batch, l2, loss_form)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_loss_over_empty_batch_is_undefined():
    with pytest.raises(DomainError):
        loss_and_gradient(WeprModel.identity(2), [])


def test_identity_model_reduces_to_epr(small_dataset):
    model = WeprModel.identity(5)
    for profile in profile_examples(small_dataset):
        assert score_sequence(model, profile).wepr == pytest.approx(profile.epr, abs=1e-10)


def test_sequence_and_token_scores():
    record = make_record([[0.5, 0.25], [0.9, 0.05]], k=2)
    profile = sequence_profile(record)
    model = WeprModel(k=2, bias=0.5, weights=(-1.0, 2.0), orientation=VALID_HIGH)
    score = score_sequence(model, profile)

    assert score.wepr == pytest.approx(0.5 + profile.features @ np.array([-1.0, 2.0]), abs=1e-12)
    assert score.validity_probability == pytest.approx(sigmoid(score.wepr))
    assert len(score.token_scores) == 2
    for token, value in zip(profile.per_token, score.token_scores):
        assert value == pytest.approx(sigmoid(score_token(model, token.contributions)))
    assert score.hallucination_scores == pytest.approx(tuple(1.0 - s for s in score.token_scores))


def test_validity_score_follows_orientation():
    low = SequenceScore(wepr=2.0, validity_probability=sigmoid(2.0), token_scores=(), flags=(), orientation=VALID_LOW)
    high = SequenceScore(wepr=2.0, validity_probability=sigmoid(2.0), token_scores=(), flags=(),
                         orientation=VALID_HIGH)
    assert high.validity_score == pytest.approx(sigmoid(2.0))
    assert low.validity_score == pytest.approx(sigmoid(-2.0))


def test_flag_threshold_is_strict():
    score = SequenceScore(wepr=0.0, validity_probability=0.5, token_scores=(0.5, 0.7, 0.2), flags=(),
                          orientation=VALID_LOW)
    assert flag_tokens(score, 0.5) == [False, True, False]
    assert hallucination_scores((0.25,), VALID_HIGH) == (0.75,)
    with pytest.raises(DomainError):
        flag_tokens(score, 1.0)


def test_sigmoid_stays_inside_unit_interval():
    assert 0.0 < sigmoid(-1000.0) < sigmoid(0.0) == 0.5 < sigmoid(1000.0) < 1.0
    values = sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert np.all((values > 0) & (values < 1))


def test_training_on_separable_data(plain_dataset):
    profiles = profile_examples(plain_dataset)
    labels = [e.label for e in plain_dataset]
    model = train(list(zip(profiles, labels)), TrainConfig())

    meta = model.training_meta
    assert meta['final_loss'] < meta['initial_loss']
    trajectory = meta['loss_trajectory']
    assert all(b <= a for a, b in zip(trajectory, trajectory[1:]))

    predictions = [score_sequence(model, p).validity_probability > 0.5 for p in profiles]
    accuracy = np.mean([int(p) == y for p, y in zip(predictions, labels)])
    assert accuracy >= 0.95
    assert model.orientation == VALID_HIGH


def test_training_is_deterministic():
    rng = np.random.default_rng(5)
    X = rng.uniform(0, 0.5, size=(60, 3))
    y = (X[:, 0] + rng.normal(0, 0.05, size=60) > 0.25).astype(float)
    config = TrainConfig(epochs=500)
    assert fit_features(X, y, config).to_dict() == fit_features(X, y, config).to_dict()


def test_degenerate_labels_are_rejected():
    X = np.ones((4, 2))
    with pytest.raises(TrainError, match='degenerate labels'):
        fit_features(X, np.ones(4), TrainConfig())
    with pytest.raises(TrainError):
        train([], TrainConfig())


def test_coefficient_summary_detects_rank2_sign():
    model = WeprModel(k=4, bias=0.0, weights=(-1.0, 2.0, -0.5, -0.1))
    summary = coefficient_summary(model)
    assert summary['signs'] == [-1, 1, -1, -1]
    assert summary['rank2_opposite_sign'] is True
    assert coefficient_summary(WeprModel(k=2, bias=0.0, weights=(1.0, 1.0)))['rank2_opposite_sign'] is None


def test_model_file_round_trip(tmp_path):
    path = tmp_path / 'model.json'
    model = WeprModel(k=3, bias=0.1, weights=(0.2, -0.3, 0.4), orientation=VALID_LOW,
                      training_meta={'epochs_run': 3})
    save_model(model, str(path))
    assert load_model(str(path)) == model
    assert json.loads(path.read_text())['k'] == 3

    with pytest.raises(DomainError, match='K=3'):
        load_model(str(path), expected_k=5)


def test_empty_or_malformed_model_file(tmp_path):
    empty = tmp_path / 'empty.json'
    empty.write_text('')
    with pytest.raises(DomainError, match='empty'):
        load_model(str(empty))

    broken = tmp_path / 'broken.json'
    broken.write_text('{"k": 2}')
    with pytest.raises(DomainError, match='malformed'):
        load_model(str(broken))


def test_model_rejects_mismatched_features():
    with pytest.raises(DomainError):
        WeprModel(k=2, bias=0.0, weights=(1.0,))
    with pytest.raises(DomainError):
        score_sequence(WeprModel.identity(3), sequence_profile(make_record([[0.5, 0.5]], k=2)))


def test_score_token_worked_example():
    model = WeprModel(k=1, bias=1.0, weights=(2.0,))
    assert score_token(model, [0.5]) == 2.0


def test_loss_and_gradient_at_zero_weights():
    model = WeprModel(k=2, bias=0.0, weights=(0.0, 0.0))
    loss, gradient = loss_and_gradient(model, [([0.3, 0.1], 1)])
    assert loss == pytest.approx(np.log(2.0), rel=1e-15)
    assert gradient[0] == pytest.approx(-0.5)
    assert gradient[1:] == pytest.approx([-0.15, -0.05])


def _noisy_problem(seed=11, n=80):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 0.5, size=(n, 3))
    y = (X[:, 0] - X[:, 2] + rng.normal(0, 0.1, size=n) > 0.0).astype(float)
    return X, y


def test_duplicating_every_example_leaves_weights_unchanged():
    X, y = _noisy_problem()
    config = TrainConfig(epochs=2000, l2_penalty=0.01, convergence_tol=0.0)
    once = fit_features(X, y, config)
    twice = fit_features(np.vstack([X, X]), np.concatenate([y, y]), config)
    assert twice.bias == pytest.approx(once.bias, abs=1e-6)
    assert twice.weights == pytest.approx(once.weights, abs=1e-6)


@pytest.mark.parametrize('l2_penalty', [1e4, 1e6])
def test_large_l2_penalty_shrinks_weights(l2_penalty):
    X, y = _noisy_problem()
    free = fit_features(X, y, TrainConfig(epochs=500))
    shrunk = fit_features(X, y, TrainConfig(epochs=500, l2_penalty=l2_penalty))
    # the loss never rises above ln 2, so l2 * |beta|^2 <= ln 2
    bound = np.sqrt(np.log(2.0) / l2_penalty)
    assert np.linalg.norm(shrunk.weights) <= bound
    assert np.linalg.norm(shrunk.weights) < np.linalg.norm(free.weights)


def test_random_model_files_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    for i in range(50):
        k = int(rng.integers(1, 21))
        model = WeprModel(
            k=k,
            bias=float(rng.normal(scale=10.0)),
            weights=tuple(float(w) for w in rng.normal(scale=10.0, size=k)),
            orientation=VALID_HIGH if rng.random() < 0.5 else VALID_LOW,
            training_meta={'epochs_run': int(rng.integers(1, 1000)), 'final_loss': float(rng.random())},
        )
        path = tmp_path / f"model_{i}.json"
        save_model(model, str(path))
        assert load_model(str(path), expected_k=k) == model
