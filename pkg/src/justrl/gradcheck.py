"""Finite-difference checks of the analytic gradients (also exposed as ``justrl gradcheck``)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grpo import ClipRange, RolloutGroup, normalize_group, surrogate_loss_and_grad
from .policy import ToyPolicy, grad_logprob, logprob
from .vocab import Vocab

SMALL_VOCAB = Vocab(("<bos>", "<eos>", "<unk>", "0", "1", "2", "\\boxed{", "}"))


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over coordinates."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def random_policy(rng: np.random.Generator, vocab: Vocab = SMALL_VOCAB) -> ToyPolicy:
    k = int(rng.integers(1, 5))
    d = int(rng.integers(1, 4))
    pol = ToyPolicy.zeros(vocab, k, d)
    return pol.with_params(rng.normal(0.0, 1.0, pol.n_params))


def random_groups(
    rng: np.random.Generator, policy: ToyPolicy, n_groups: int = 2, g: int = 3, spread: float = 0.6
) -> list[RolloutGroup]:
    """Groups whose old log-probs are the current ones perturbed by up to ``spread``.

    The perturbation puts ratios on both sides of a [0.8, 1.28] clip range.
    """
    v = policy.vocab_size
    groups = []
    for n in range(n_groups):
        prompt = [policy.vocab.bos] + rng.integers(2, v, size=int(rng.integers(0, 3))).tolist()
        responses, old = [], []
        for _ in range(g):
            resp = rng.integers(0, v, size=int(rng.integers(1, 5))).tolist()
            cur = np.array([logprob(policy, prompt + resp[:t], resp[t]) for t in range(len(resp))])
            old.append(cur + rng.uniform(-spread, spread, size=len(resp)))
            responses.append(resp)
        rewards = rng.choice([-1.0, 1.0], size=g)
        if np.all(rewards == rewards[0]):
            rewards[0] = -rewards[0]
        groups.append(
            RolloutGroup(f"p{n}", prompt, responses, old, rewards, advantages=normalize_group(rewards))
        )
    return groups


@dataclass
class GradcheckResult:
    kind: str
    max_rel_error: float
    clipped_low: int = 0
    clipped_high: int = 0


def check_logprob(rng: np.random.Generator, h: float = 1e-5) -> GradcheckResult:
    pol = random_policy(rng)
    prefix = [pol.vocab.bos] + rng.integers(0, pol.vocab_size, size=int(rng.integers(0, 6))).tolist()
    token = int(rng.integers(0, pol.vocab_size))
    analytic = grad_logprob(pol, prefix, token)
    numeric = central_difference(lambda p: logprob(pol.with_params(p), prefix, token), pol.params.copy(), h)
    return GradcheckResult("logprob", max_relative_error(analytic, numeric))


def check_surrogate(rng: np.random.Generator, clip: ClipRange = ClipRange(), h: float = 1e-5) -> GradcheckResult:
    pol = random_policy(rng)
    groups = random_groups(rng, pol)
    res = surrogate_loss_and_grad(pol, groups, clip)
    numeric = central_difference(lambda p: surrogate_loss_and_grad(pol.with_params(p), groups, clip).loss, pol.params.copy(), h)
    low = high = 0
    for grp in groups:
        for resp, old, a in zip(grp.responses, grp.old_logprobs, grp.advantages):
            for t in range(len(resp)):
                rho = np.exp(logprob(pol, list(grp.prompt_tokens) + resp[:t], resp[t]) - old[t])
                low += int(a < 0 and rho < clip.low)
                high += int(a > 0 and rho > clip.high)
    return GradcheckResult("surrogate", max_relative_error(res.grad, numeric), low, high)


def run(instances: int = 100, seed: int = 0, tol: float = 1e-4) -> tuple[bool, list[GradcheckResult]]:
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(instances):
        results.append(check_logprob(rng))
        results.append(check_surrogate(rng))
    return all(r.max_rel_error <= tol for r in results), results
