"""Temperature / nucleus sampling with counter-based, per-rollout random streams.

Every rollout owns a Philox stream keyed by a tuple of integers (typically
``(seed, step, prompt_index, rollout_index)``). The stream is consumed one
uniform per generated position, so a rollout's tokens do not depend on which
other rollouts are generated alongside it, in what order, or by which worker.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .policy import log_softmax

WORKERS_ENV = "JUSTRL_WORKERS"


@dataclass(frozen=True)
class SamplerSettings:
    temperature: float = 1.0
    top_p: float = 1.0
    max_response_len: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_response_len < 1:
            raise ConfigError("max_response_len must be >= 1")


@dataclass
class Rollout:
    tokens: list[int]
    logprobs: np.ndarray  # temperature-1 policy log-probs of the chosen tokens
    entropies: np.ndarray  # temperature-1 policy entropy at each sampled prefix
    truncated: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tokens)


def stream_key(*parts: int | str) -> list[int]:
    """Map a tuple of ints/strings to SeedSequence entropy (stable across processes)."""
    key = []
    for part in parts:
        if isinstance(part, str):
            part = int.from_bytes(hashlib.blake2b(part.encode(), digest_size=8).digest(), "little")
        key.append(int(part) & 0xFFFFFFFFFFFFFFFF)
    return key


def substream(*parts: int | str) -> np.random.Generator:
    seq = np.random.SeedSequence(stream_key(*parts))
    return np.random.Generator(np.random.Philox(key=seq.generate_state(2, np.uint64)))


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def nucleus_probs(logits: np.ndarray, temperature: float, top_p: float) -> np.ndarray:
    """Row-wise sampling distribution after temperature scaling and top-p truncation.

    The kept set is the shortest prefix of tokens (sorted by probability, ties by
    lower id) whose cumulative mass reaches ``top_p``; the boundary token is kept.
    """
    probs = np.exp(log_softmax(np.atleast_2d(logits) / temperature))
    if top_p >= 1.0:
        return probs
    order = np.argsort(-probs, axis=-1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=-1)
    cum = np.cumsum(sorted_p, axis=-1)
    # number of tokens needed to reach top_p, inclusive of the boundary token
    n_keep = np.minimum((cum < top_p).sum(axis=-1) + 1, probs.shape[-1])
    keep_sorted = np.arange(probs.shape[-1])[None, :] < n_keep[:, None]
    keep = np.zeros_like(keep_sorted)
    np.put_along_axis(keep, order, keep_sorted, axis=-1)
    kept = np.where(keep, probs, 0.0)
    return kept / kept.sum(axis=-1, keepdims=True)


def _choose(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs, axis=-1)
    choice = (cum <= (u * cum[:, -1])[:, None]).sum(axis=-1)
    # guard against u*total landing on the final cumulative value through rounding
    last_nonzero = probs.shape[-1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=-1)
    return np.minimum(choice, last_nonzero)


def sample_batch(
    policy,
    prompts: Sequence[Sequence[int]],
    settings: SamplerSettings,
    rngs: Sequence[np.random.Generator],
) -> list[Rollout]:
    """Sample one response per prompt, all rows advancing in lockstep."""
    n = len(prompts)
    if n == 0:
        return []
    if len(rngs) != n:
        raise ValueError("one random stream per prompt is required")
    vocab = policy.vocab
    max_len = settings.max_response_len
    uniforms = np.stack([rng.random(max_len) for rng in rngs])

    width = max(len(p) for p in prompts) + max_len
    buf = np.zeros((n, width), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for r, prompt in enumerate(prompts):
        vocab.check_ids(prompt)
        buf[r, : len(prompt)] = prompt
        lengths[r] = len(prompt)
    starts = lengths.copy()

    logps = np.zeros((n, max_len))
    ents = np.zeros((n, max_len))
    active = np.ones(n, dtype=bool)
    for t in range(max_len):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        logits = policy.next_logits(buf[rows], lengths[rows])
        lp = log_softmax(logits)
        probs = nucleus_probs(logits, settings.temperature, settings.top_p)
        tok = _choose(probs, uniforms[rows, t])
        logps[rows, t] = lp[np.arange(rows.size), tok]
        ents[rows, t] = -(np.exp(lp) * lp).sum(axis=-1)
        buf[rows, lengths[rows]] = tok
        lengths[rows] += 1
        active[rows[tok == vocab.eos]] = False

    out = []
    for r in range(n):
        m = int(lengths[r] - starts[r])
        tokens = buf[r, starts[r] : lengths[r]].tolist()
        out.append(
            Rollout(
                tokens=tokens,
                logprobs=logps[r, :m].copy(),
                entropies=ents[r, :m].copy(),
                truncated=bool(active[r]),
            )
        )
    return out


def sample_response(
    policy,
    prompt: Sequence[int],
    settings: SamplerSettings,
    rng: np.random.Generator | None = None,
) -> Rollout:
    """Sample a single response; ``rng`` defaults to the stream keyed by ``settings.seed``."""
    if rng is None:
        rng = substream(settings.seed)
    return sample_batch(policy, [prompt], settings, [rng])[0]


def sample_parallel(
    policy,
    prompts: Sequence[Sequence[int]],
    settings: SamplerSettings,
    rngs: Sequence[np.random.Generator],
    workers: int | None = None,
) -> list[Rollout]:
    """``sample_batch`` split across a thread pool; results are identical for any worker count."""
    workers = worker_count() if workers is None else max(1, workers)
    n = len(prompts)
    if workers == 1 or n < 2:
        return sample_batch(policy, prompts, settings, rngs)
    bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
    chunks = [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = pool.map(lambda c: sample_batch(policy, prompts[c[0] : c[1]], settings, rngs[c[0] : c[1]]), chunks)
        return [r for part in parts for r in part]
