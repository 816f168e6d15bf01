"""
Information-theoretic quantities over top-K token distributions.

All entropies are in bits. 0 * log(0) is taken as 0.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

try:
    from .exceptions import DomainError
    from .logprob_model import GenerationSettings, SequenceRecord, TokenDistribution
except ImportError:
    from exceptions import DomainError
    from logprob_model import GenerationSettings, SequenceRecord, TokenDistribution

logger = logging.getLogger(__name__)

# Returned by sufficiency_ratio when the tail bound is zero
FULLY_CAPTURED = math.inf

# Smallest probability a retempered candidate may take
_PROBABILITY_FLOOR = float(np.finfo(float).tiny)


@dataclass(frozen=True)
class TokenEntropyProfile:
    """Truncated entropy of one step with its per-rank decomposition."""
    step_index: int
    h_k: float
    contributions: Tuple[float, ...]
    residual_mass: float
    tail_bound_full: Optional[float] = None
    tail_bound_truncated: Optional[float] = None


@dataclass(frozen=True)
class SequenceEntropyProfile:
    """Per-token profiles of a record plus its EPR and mean per-rank features."""
    per_token: Tuple[TokenEntropyProfile, ...]
    epr: float
    mean_feature_vector: Tuple[float, ...]

    @property
    def k(self) -> int:
        return len(self.mean_feature_vector)

    @property
    def features(self) -> np.ndarray:
        return np.asarray(self.mean_feature_vector, dtype=float)

    def contribution_matrix(self) -> np.ndarray:
        """L x K matrix of s_{k,j}, zero-padded for missing ranks."""
        matrix = np.zeros((len(self.per_token), self.k))
        for row, token in enumerate(self.per_token):
            matrix[row, :len(token.contributions)] = token.contributions
        return matrix

    def diagnostics(self) -> Dict[str, Optional[float]]:
        """Mean tail bounds over the sequence and the sequence sufficiency ratio."""
        def _mean(values):
            values = [v for v in values if v is not None]
            return math.fsum(values) / len(values) if values else None

        full = _mean(t.tail_bound_full for t in self.per_token)
        truncated = _mean(t.tail_bound_truncated for t in self.per_token)
        reference = truncated if truncated is not None else full
        ratio = sufficiency_ratio(self.epr, reference) if reference is not None else None
        return {
            'mean_residual_mass': _mean(t.residual_mass for t in self.per_token),
            'mean_tail_bound_full': full,
            'mean_tail_bound_truncated': truncated,
            'sufficiency_ratio': ratio,
        }


def entropic_contribution(p: float) -> float:
    """-p * log2(p), with the limit value 0 at p = 0 and p = 1."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability must lie in [0, 1], got {p!r}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p)


def _check_mass(residual_mass: float) -> None:
    if not 0.0 <= residual_mass <= 1.0:
        raise DomainError(f"residual mass must lie in [0, 1], got {residual_mass!r}")


def token_entropy_topk(dist: TokenDistribution) -> TokenEntropyProfile:
    """Truncated entropy H_K of one step from its exposed candidates."""
    contributions = tuple(entropic_contribution(p) for p in dist.probabilities)
    residual = min(1.0, max(0.0, 1.0 - math.fsum(dist.probabilities)))
    return TokenEntropyProfile(
        step_index=dist.step_index,
        h_k=math.fsum(contributions),
        contributions=contributions,
        residual_mass=residual,
    )


def tail_bound_full_vocab(residual_mass: float, vocab_size: int, k: int,
                          approximate: bool = False) -> float:
    """
    Largest entropy the unexposed vocabulary tail can add.

    The maximum is reached when the residual mass is spread uniformly over the
    |V| - K remaining tokens. With approximate=True the tail size is taken as |V|.
    """
    _check_mass(residual_mass)
    if vocab_size <= k:
        raise DomainError(f"vocab_size ({vocab_size}) must exceed K ({k})")
    if residual_mass == 0.0:
        return 0.0
    slots = vocab_size if approximate else vocab_size - k
    return entropic_contribution(residual_mass) + residual_mass * math.log2(slots)


def tail_bound_truncated(residual_mass: float, sampling_top_k: int, k: int) -> float:
    """Tail bound when only K_samp tokens can be sampled: K_samp - K tail slots."""
    _check_mass(residual_mass)
    if sampling_top_k <= k:
        raise DomainError(f"sampling_top_k ({sampling_top_k}) must exceed K ({k})")
    if residual_mass == 0.0:
        return 0.0
    return entropic_contribution(residual_mass) + residual_mass * math.log2(sampling_top_k - k)


def sufficiency_ratio(h_k: float, tail_bound: float) -> float:
    """H_K over the tail bound; FULLY_CAPTURED when the bound is zero."""
    if h_k < 0 or tail_bound < 0:
        raise DomainError("entropy and tail bound must be non-negative")
    if tail_bound == 0.0:
        return FULLY_CAPTURED
    return h_k / tail_bound


def token_profile(dist: TokenDistribution, settings: GenerationSettings) -> TokenEntropyProfile:
    """token_entropy_topk with the tail bounds the settings allow."""
    base = token_entropy_topk(dist)
    exposed = len(dist.candidates)

    full = None
    if settings.vocab_size is not None:
        full = tail_bound_full_vocab(base.residual_mass, settings.vocab_size, exposed)

    truncated = None
    if settings.sampling_top_k is not None:
        if settings.sampling_top_k > exposed:
            truncated = tail_bound_truncated(base.residual_mass, settings.sampling_top_k, exposed)
        else:
            # every sampleable token is exposed
            truncated = 0.0

    return TokenEntropyProfile(
        step_index=base.step_index,
        h_k=base.h_k,
        contributions=base.contributions,
        residual_mass=base.residual_mass,
        tail_bound_full=full,
        tail_bound_truncated=truncated,
    )


def sequence_profile(record: SequenceRecord) -> SequenceEntropyProfile:
    """Per-token profiles, EPR and the mean per-rank feature vector of a record."""
    per_token = tuple(token_profile(step, record.settings) for step in record.steps)
    length = len(per_token)
    k = record.settings.top_k_exposed

    epr = math.fsum(t.h_k for t in per_token) / length
    features = tuple(
        math.fsum(t.contributions[rank] for t in per_token if rank < len(t.contributions)) / length
        for rank in range(k)
    )
    return SequenceEntropyProfile(per_token=per_token, epr=epr, mean_feature_vector=features)


def sequence_epr(record: SequenceRecord) -> float:
    return sequence_profile(record).epr


def retemper_probabilities(probabilities: Sequence[float], new_temperature: float,
                           source_temperature: float) -> np.ndarray:
    """
    Re-apply softmax at a new temperature over the exposed candidates.

    Logits are recovered up to a constant as T_source * ln p. Only the K exposed
    candidates are renormalised over, since the full logit vector is unknown.
    """
    if not new_temperature > 0 or not source_temperature > 0:
        raise DomainError("temperatures must be positive")
    probs = np.asarray(probabilities, dtype=float)
    if np.any(probs <= 0):
        raise DomainError("retempering needs strictly positive probabilities")

    scaled = (source_temperature / new_temperature) * np.log(probs)
    scaled -= scaled.max()
    weights = np.exp(scaled)
    result = weights / weights.sum()
    return np.maximum(result, _PROBABILITY_FLOOR)


def retemper(dist: TokenDistribution, new_temperature: float,
             source_temperature: float) -> TokenDistribution:
    """TokenDistribution resampled at new_temperature, renormalised over its candidates."""
    probabilities = retemper_probabilities(dist.probabilities, new_temperature, source_temperature)
    # Positive temperatures keep the ranking, so candidate order is preserved
    candidates = tuple((token, float(p)) for (token, _), p in zip(dist.candidates, probabilities))
    return TokenDistribution(
        step_index=dist.step_index,
        candidates=candidates,
        sampled_rank=dist.sampled_rank,
        sampled_token=dist.sampled_token,
    )
