import pytest

from src.config import build_run_config, load_config, load_flat_config, merge_config
from src.exceptions import DomainError


def test_defaults_load():
    config = build_run_config()
    assert config.section('generation')['top_k_exposed'] == 15
    assert config.section('evaluation')['k_values'] == [1, 2, 5, 10, 15]
    assert config.section('missing') == {}


def test_flat_file_is_coerced_to_default_types(tmp_path):
    path = tmp_path / 'run.conf'
    path.write_text(
        "# overrides\n"
        "training.epochs = 500\n"
        "training.learning_rate = 0.5   # halved\n"
        "evaluation.k_values = 1, 3, 5\n"
        "generation.vocab_size = 32000\n"
        "judge.mode = mock\n"
        "\n",
        encoding='utf-8',
    )
    overrides = load_flat_config(str(path), load_config())
    assert overrides['training'] == {'epochs': 500, 'learning_rate': 0.5}
    assert overrides['evaluation'] == {'k_values': [1, 3, 5]}
    assert overrides['generation'] == {'vocab_size': 32000}
    assert overrides['judge'] == {'mode': 'mock'}


@pytest.mark.parametrize('line', [
    'training.unknown = 1',
    'epochs = 5',
    'training.epochs 5',
    'training.epochs = many',
])
def test_flat_file_errors(tmp_path, line):
    path = tmp_path / 'bad.conf'
    path.write_text(line + '\n', encoding='utf-8')
    with pytest.raises(DomainError):
        load_flat_config(str(path), load_config())


def test_precedence_flags_over_file_over_defaults(tmp_path):
    path = tmp_path / 'run.conf'
    path.write_text("training.epochs = 500\ntraining.l2_penalty = 0.1\n", encoding='utf-8')
    config = build_run_config({'training': {'epochs': 50, 'l2_penalty': None}}, config_file=str(path))
    assert config.section('training')['epochs'] == 50
    assert config.section('training')['l2_penalty'] == 0.1
    assert config.section('training')['learning_rate'] == 1.0


def test_merge_does_not_mutate_base():
    base = {'render': {'threshold': 0.5}}
    merged = merge_config(base, {'render': {'threshold': 0.7}})
    assert merged['render']['threshold'] == 0.7
    assert base['render']['threshold'] == 0.5


def test_validate(tmp_path):
    with pytest.raises(DomainError, match='does not exist'):
        build_run_config(input_path=str(tmp_path / 'nope.jsonl')).validate()
    with pytest.raises(DomainError, match='threshold'):
        build_run_config({'render': {'threshold': 1.5}}).validate()
