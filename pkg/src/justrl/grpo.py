"""Group-relative advantages and the clipped token-level surrogate loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, StructuralError
from .policy import ToyPolicy, forward_backward, span_windows

ADVANTAGE_EPS = 1e-6


@dataclass(frozen=True)
class ClipRange:
    """Ratio bounds ``[1 - eps_low, 1 + eps_high]``."""

    low: float = 0.8
    high: float = 1.28

    def __post_init__(self) -> None:
        if not 0 < self.low < 1 < self.high:
            raise ConfigError(f"clip range must satisfy 0 < low < 1 < high, got [{self.low}, {self.high}]")


@dataclass(frozen=True)
class OverlongPenaltyConfig:
    enabled: bool = False
    window: int = 4096
    max_response_len: int = 15000

    def __post_init__(self) -> None:
        if self.enabled and not 0 < self.window < self.max_response_len:
            raise ConfigError(
                f"overlong window must satisfy 0 < window < max_response_len, "
                f"got window={self.window}, max_response_len={self.max_response_len}"
            )


@dataclass
class RolloutGroup:
    prompt_id: str
    prompt_tokens: list[int]
    responses: list[list[int]]
    old_logprobs: list[np.ndarray]
    rewards: np.ndarray
    advantages: np.ndarray = field(default=None)  # type: ignore[assignment]
    truncated: list[bool] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        g = len(self.responses)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.advantages is None:
            self.advantages = np.zeros(g)
        self.advantages = np.asarray(self.advantages, dtype=np.float64)
        if self.truncated is None:
            self.truncated = [False] * g
        self.old_logprobs = [np.asarray(lp, dtype=np.float64) for lp in self.old_logprobs]
        self.validate()

    @property
    def size(self) -> int:
        return len(self.responses)

    def validate(self) -> None:
        g = len(self.responses)
        if g < 2:
            raise StructuralError(f"group {self.prompt_id!r} has {g} responses, need at least 2")
        sizes = {len(self.old_logprobs), len(self.rewards), len(self.advantages), len(self.truncated)}
        if sizes != {g}:
            raise StructuralError(f"group {self.prompt_id!r} has parallel lists of unequal length")
        for resp, lp in zip(self.responses, self.old_logprobs):
            if len(resp) != len(lp):
                raise StructuralError(
                    f"group {self.prompt_id!r}: response of {len(resp)} tokens has {len(lp)} old log-probs"
                )

    def normalize(self, scale_by_std: bool = True) -> RolloutGroup:
        self.advantages = normalize_group(self.rewards, scale_by_std=scale_by_std)
        return self


def normalize_group(rewards: Sequence[float], eps: float = ADVANTAGE_EPS, scale_by_std: bool = True) -> np.ndarray:
    """``(r - mean(r)) / (std(r) + eps)`` with population std; all-equal groups give exact zeros."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ConfigError(f"a reward group needs at least 2 entries, got {r.size}")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    centered = r - r.mean()
    if not scale_by_std:
        return centered
    return centered / (r.std() + eps)


def apply_overlong_penalty(base_reward: float, response_len: int, cfg: OverlongPenaltyConfig) -> float:
    """Linear penalty ramping from 0 to -1 over the last ``window`` tokens before the cap."""
    if not cfg.enabled:
        return base_reward
    threshold = cfg.max_response_len - cfg.window
    if response_len <= threshold:
        return base_reward
    penalty = (threshold - response_len) / cfg.window
    return base_reward + min(0.0, max(-1.0, penalty))


@dataclass
class SurrogateResult:
    loss: float
    grad: np.ndarray
    clip_fraction: float
    n_tokens: int


def surrogate_loss_and_grad(policy: ToyPolicy, groups: Sequence[RolloutGroup], clip: ClipRange) -> SurrogateResult:
    """Token-mean clipped surrogate with no KL and no entropy term.

    For token ``t`` of response ``i`` with ratio ``rho = exp(logp_new - logp_old)``::

        term = min(rho * A_i, clip(rho, low, high) * A_i)
        loss = -sum(term) / total_tokens

    A token whose clamped branch binds (``A > 0, rho > high`` or ``A < 0, rho < low``)
    contributes a constant and therefore no gradient.
    """
    seqs, starts, old, adv = [], [], [], []
    for group in groups:
        group.validate()
        prompt = list(group.prompt_tokens)
        for resp, lp, a in zip(group.responses, group.old_logprobs, group.advantages):
            seqs.append(np.asarray(prompt + list(resp), dtype=np.int64))
            starts.append(len(prompt))
            old.append(lp)
            adv.append(np.full(len(resp), a))
    dim = policy.n_params
    if not seqs:
        return SurrogateResult(0.0, np.zeros(dim), 0.0, 0)
    old_lp = np.concatenate(old)
    advantages = np.concatenate(adv)
    n_tokens = advantages.size
    if n_tokens == 0:
        return SurrogateResult(0.0, np.zeros(dim), 0.0, 0)

    idx, mask, targets = span_windows(seqs, starts, policy.context_width)
    new_lp, _ = forward_backward(policy, idx, mask, targets)
    ratio = np.exp(new_lp - old_lp)
    clipped = np.clip(ratio, clip.low, clip.high)
    terms = np.minimum(ratio * advantages, clipped * advantages)
    binding = ((advantages > 0) & (ratio > clip.high)) | ((advantages < 0) & (ratio < clip.low))
    # d term / d logp_new = rho * A on the unclipped branch, 0 where the clamp binds
    coeffs = np.where(binding, 0.0, ratio * advantages) / n_tokens
    if np.any(coeffs):
        _, g = forward_backward(policy, idx, mask, targets, coeffs)
        grad = -g
    else:
        grad = np.zeros(dim)
    loss = -float(terms.sum()) / n_tokens
    return SurrogateResult(loss, grad, float(binding.mean()), int(n_tokens))
