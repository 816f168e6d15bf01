"""
Weighted Entropy Production Rate (WEPR).

A logistic model over the mean per-rank entropic contributions of a sequence:
    WEPR = beta_0 + sum_k beta_k * x_k
with sigma(WEPR) read as the probability that the answer is valid (Y=1), and
sigma(S_beta) of each step as a token-level score.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from .entropy_core import SequenceEntropyProfile
    from .exceptions import DomainError, TrainError
except ImportError:
    from entropy_core import SequenceEntropyProfile
    from exceptions import DomainError, TrainError

logger = logging.getLogger(__name__)

VALID_HIGH = 'valid-high'
VALID_LOW = 'valid-low'
ORIENTATIONS = (VALID_HIGH, VALID_LOW)

LOSS_FORMS = ('standard', 'literal')

# Points kept from the loss trajectory in the model file
_TRAJECTORY_POINTS = 200

_SIGMOID_FLOOR = float(np.finfo(float).tiny)
_SIGMOID_CEIL = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20000
    learning_rate: float = 1.0
    l2_penalty: float = 0.0
    seed: int = 42
    convergence_tol: float = 1e-10
    loss_form: str = 'standard'

    def __post_init__(self):
        if self.loss_form not in LOSS_FORMS:
            raise DomainError(f"loss_form must be one of {LOSS_FORMS}, got {self.loss_form!r}")
        if self.epochs < 1 or self.learning_rate <= 0 or self.l2_penalty < 0:
            raise DomainError("epochs and learning_rate must be positive, l2_penalty non-negative")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        names = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in data.items() if k in names})


@dataclass(frozen=True)
class WeprModel:
    """Learned weights beta_0..beta_K plus the metadata of the run that produced them."""
    k: int
    bias: float
    weights: Tuple[float, ...]
    orientation: str = VALID_HIGH
    training_meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != self.k:
            raise DomainError(f"model declares K={self.k} but has {len(self.weights)} weights")
        if self.orientation not in ORIENTATIONS:
            raise DomainError(f"unknown orientation {self.orientation!r}")

    @classmethod
    def identity(cls, k: int) -> 'WeprModel':
        """beta_0 = 0, beta_k = 1: WEPR reduces to EPR, which is high for hallucinations."""
        return cls(k=k, bias=0.0, weights=(1.0,) * k, orientation=VALID_LOW)

    @property
    def weight_vector(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def check_features(self, k: int) -> None:
        if k != self.k:
            raise DomainError(f"model was trained for K={self.k} but data has K={k}")

    def decision(self, features: np.ndarray) -> np.ndarray:
        """WEPR values for a feature matrix (n x K) or a single vector."""
        features = np.asarray(features, dtype=float)
        self.check_features(features.shape[-1])
        return self.bias + features @ self.weight_vector

    def to_dict(self) -> Dict[str, Any]:
        return {
            'k': self.k,
            'bias': self.bias,
            'weights': list(self.weights),
            'orientation': self.orientation,
            'training_meta': self.training_meta,
        }


@dataclass(frozen=True)
class SequenceScore:
    """Sequence and token-level WEPR scores of one record."""
    wepr: float
    validity_probability: float
    token_scores: Tuple[float, ...]
    flags: Tuple[bool, ...]
    orientation: str = VALID_HIGH

    @property
    def validity_score(self) -> float:
        """Score that increases with validity under the model's orientation."""
        if self.orientation == VALID_HIGH:
            return self.validity_probability
        return float(sigmoid(-self.wepr))

    @property
    def hallucination_scores(self) -> Tuple[float, ...]:
        return hallucination_scores(self.token_scores, self.orientation)


def sigmoid(z):
    """Logistic function without overflow, kept strictly inside (0, 1)."""
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    result = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    result = np.clip(result, _SIGMOID_FLOOR, _SIGMOID_CEIL)
    return float(result) if result.ndim == 0 else result


def hallucination_scores(token_scores: Sequence[float], orientation: str) -> Tuple[float, ...]:
    """sigma(S_beta) when low S_beta means valid, 1 - sigma(S_beta) otherwise."""
    if orientation == VALID_LOW:
        return tuple(token_scores)
    return tuple(1.0 - s for s in token_scores)


def _padded(contributions: Sequence[float], k: int) -> np.ndarray:
    if len(contributions) > k:
        raise DomainError(f"{len(contributions)} contributions given for a K={k} model")
    padded = np.zeros(k)
    padded[:len(contributions)] = contributions
    return padded


def score_token(model: WeprModel, contributions: Sequence[float]) -> float:
    """S_beta of one step: beta_0 + sum_k beta_k s_k."""
    return float(model.bias + _padded(contributions, model.k) @ model.weight_vector)


def flag_tokens(score: SequenceScore, threshold: float = 0.5) -> List[bool]:
    """Flag tokens whose hallucination score is strictly above threshold."""
    if not 0.0 < threshold < 1.0:
        raise DomainError(f"threshold must lie in (0, 1), got {threshold}")
    return [s > threshold for s in score.hallucination_scores]


def score_sequence(model: WeprModel, profile: SequenceEntropyProfile,
                   threshold: float = 0.5) -> SequenceScore:
    """WEPR, sigma(WEPR) and per-token sigma(S_beta) for one record."""
    model.check_features(profile.k)
    wepr_value = float(model.bias + profile.features @ model.weight_vector)

    token_values = model.bias + profile.contribution_matrix() @ model.weight_vector
    token_scores = tuple(float(s) for s in np.atleast_1d(sigmoid(token_values)))

    score = SequenceScore(
        wepr=wepr_value,
        validity_probability=sigmoid(wepr_value),
        token_scores=token_scores,
        flags=(),
        orientation=model.orientation,
    )
    return replace(score, flags=tuple(flag_tokens(score, threshold)))


def _objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
               l2_penalty: float, loss_form: str) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy plus l2 on the non-bias weights, with its gradient."""
    z = theta[0] + X @ theta[1:]
    if loss_form == 'standard':
        # -ln sigma(z) = softplus(-z), -ln(1 - sigma(z)) = softplus(z)
        losses = y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
        dz = sigmoid(z) - y
    else:
        # second term taken as ln sigma(1 - z), as the objective is sometimes written
        losses = y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z - 1.0)
        dz = y * (sigmoid(z) - 1.0) + (1.0 - y) * sigmoid(z - 1.0)
    dz = np.atleast_1d(dz)

    n = len(y)
    weights = theta[1:]
    loss = float(np.mean(losses) + l2_penalty * weights @ weights)
    gradient = np.empty_like(theta)
    gradient[0] = dz.sum() / n
    gradient[1:] = X.T @ dz / n + 2.0 * l2_penalty * weights
    return loss, gradient


def loss_and_gradient(model: WeprModel, batch: Sequence[Tuple[Sequence[float], int]],
                      l2_penalty: float = 0.0, loss_form: str = 'standard') -> Tuple[float, np.ndarray]:
    """Loss and analytic gradient [d/d beta_0, d/d beta_1..K] over a batch of (x, Y)."""
    if not batch:
        raise DomainError("loss over an empty batch is undefined")
    X = np.asarray([x for x, _ in batch], dtype=float)
    y = np.asarray([label for _, label in batch], dtype=float)
    model.check_features(X.shape[1])
    theta = np.concatenate(([model.bias], model.weight_vector))
    return _objective(theta, X, y, l2_penalty, loss_form)


def _decimate(trajectory: List[float]) -> List[float]:
    step = max(1, len(trajectory) // _TRAJECTORY_POINTS)
    kept = trajectory[::step]
    if (len(trajectory) - 1) % step:
        kept.append(trajectory[-1])
    return kept


def fit_features(X: np.ndarray, y: np.ndarray, config: TrainConfig) -> WeprModel:
    """Full-batch gradient descent from beta = 0 on a feature matrix."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise DomainError("features must be an n x K matrix matching the labels")
    if len(np.unique(y)) < 2:
        raise TrainError("degenerate labels: training needs both classes")
    if not np.all(np.isfinite(X)):
        raise TrainError("non-finite feature values")

    theta = np.zeros(X.shape[1] + 1)
    loss, gradient = _objective(theta, X, y, config.l2_penalty, config.loss_form)
    if not math.isfinite(loss):
        raise TrainError("non-finite initial loss")

    trajectory = [loss]
    learning_rate = config.learning_rate
    epochs_run = 0
    converged = False

    for _ in range(config.epochs):
        candidate = theta - learning_rate * gradient
        new_loss, new_gradient = _objective(candidate, X, y, config.l2_penalty, config.loss_form)
        halvings = 0
        while not (math.isfinite(new_loss) and new_loss <= loss) and halvings < 60:
            learning_rate *= 0.5
            halvings += 1
            candidate = theta - learning_rate * gradient
            new_loss, new_gradient = _objective(candidate, X, y, config.l2_penalty, config.loss_form)
        if not (math.isfinite(new_loss) and new_loss <= loss):
            converged = True
            break

        improvement = loss - new_loss
        theta, loss, gradient = candidate, new_loss, new_gradient
        trajectory.append(loss)
        epochs_run += 1
        if improvement < config.convergence_tol:
            converged = True
            break

    if not math.isfinite(loss):
        raise TrainError("non-finite loss during training")

    z = theta[0] + X @ theta[1:]
    orientation = VALID_HIGH if z[y == 1].mean() >= z[y == 0].mean() else VALID_LOW

    meta = {
        'epochs': config.epochs,
        'epochs_run': epochs_run,
        'converged': converged,
        'learning_rate': config.learning_rate,
        'final_learning_rate': learning_rate,
        'l2_penalty': config.l2_penalty,
        'seed': config.seed,
        'loss_form': config.loss_form,
        'initial_loss': trajectory[0],
        'final_loss': loss,
        'loss_trajectory': _decimate(trajectory),
        'n_train': int(len(y)),
        'n_pos': int(y.sum()),
    }
    logger.info(f"WEPR training: loss {trajectory[0]:.6f} -> {loss:.6f} after {epochs_run} epochs "
                f"(orientation {orientation})")
    return WeprModel(
        k=X.shape[1],
        bias=float(theta[0]),
        weights=tuple(float(w) for w in theta[1:]),
        orientation=orientation,
        training_meta=meta,
    )


def feature_matrix(profiles: Sequence[SequenceEntropyProfile]) -> np.ndarray:
    ks = {p.k for p in profiles}
    if len(ks) > 1:
        raise DomainError(f"profiles disagree on K: {sorted(ks)}")
    return np.vstack([p.features for p in profiles])


def train(dataset: Sequence[Tuple[SequenceEntropyProfile, int]], config: TrainConfig) -> WeprModel:
    """Fit WEPR weights on (profile, Y) pairs."""
    if not dataset:
        raise TrainError("degenerate labels: empty training set")
    X = feature_matrix([profile for profile, _ in dataset])
    y = np.asarray([label for _, label in dataset], dtype=float)
    return fit_features(X, y, config)


def coefficient_summary(model: WeprModel) -> Dict[str, Any]:
    """Sign pattern of beta_1..K and whether beta_2 opposes the other ranks."""
    signs = [int(np.sign(w)) for w in model.weights]
    summary: Dict[str, Any] = {'signs': signs, 'rank2_opposite_sign': None}
    if model.k >= 3:
        others = sum(s for rank, s in enumerate(signs, start=1) if rank != 2)
        majority = int(np.sign(others))
        if majority != 0 and signs[1] != 0:
            summary['rank2_opposite_sign'] = signs[1] == -majority
    return summary


def save_model(model: WeprModel, path: str) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(json.dumps(model.to_dict(), sort_keys=True, indent=2, allow_nan=False) + '\n')
    logger.info(f"Saved WEPR model (K={model.k}) to {path}")


def load_model(path: str, expected_k: Optional[int] = None) -> WeprModel:
    """Load a model file; DomainError on empty, malformed or K-mismatched files."""
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    if not text.strip():
        raise DomainError(f"model file {path} is empty")
    try:
        data = json.loads(text)
        model = WeprModel(
            k=int(data['k']),
            bias=float(data['bias']),
            weights=tuple(float(w) for w in data['weights']),
            orientation=data.get('orientation', VALID_HIGH),
            training_meta=data.get('training_meta', {}),
        )
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DomainError(f"model file {path} is malformed: {e}") from None
    if expected_k is not None:
        model.check_features(expected_k)
    return model
