"""Toy autoregressive policy with closed-form log-probabilities and gradients.

The next-token distribution conditions on the mean embedding of the last
``context_width`` tokens of the prefix::

    h      = mean(E[prefix[-k:]])            (zero vector for an empty prefix)
    logits = W @ h + b

with ``E`` (V x D) token embeddings, ``W`` (V x D) output weights and ``b`` (V)
biases, stored flat in that order. The parameter count is therefore
``V * (2 * D + 1)``; the context width changes the function, not the size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, StructuralError
from .vocab import DEFAULT_VOCAB, Vocab


def n_params(vocab_size: int, context_width: int, embed_dim: int) -> int:
    del context_width  # averaging over the window adds no parameters
    return vocab_size * (2 * embed_dim + 1)


def log_softmax(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


@dataclass(frozen=True, eq=False)
class ToyPolicy:
    params: np.ndarray
    vocab: Vocab = DEFAULT_VOCAB
    context_width: int = 8
    embed_dim: int = 16

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(self.params, dtype=np.float64)
        expected = n_params(len(self.vocab), self.context_width, self.embed_dim)
        if p.ndim != 1 or p.size != expected:
            raise StructuralError(f"expected {expected} parameters, got shape {p.shape}")
        if self.context_width < 1 or self.embed_dim < 1:
            raise DomainError("context_width and embed_dim must be positive")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)

    @classmethod
    def zeros(cls, vocab: Vocab = DEFAULT_VOCAB, context_width: int = 8, embed_dim: int = 16) -> ToyPolicy:
        return cls(np.zeros(n_params(len(vocab), context_width, embed_dim)), vocab, context_width, embed_dim)

    @classmethod
    def random(
        cls,
        seed: int,
        vocab: Vocab = DEFAULT_VOCAB,
        context_width: int = 8,
        embed_dim: int = 16,
        scale: float = 0.1,
    ) -> ToyPolicy:
        rng = np.random.Generator(np.random.Philox(seed))
        size = n_params(len(vocab), context_width, embed_dim)
        return cls(scale * rng.standard_normal(size), vocab, context_width, embed_dim)

    def with_params(self, params: np.ndarray) -> ToyPolicy:
        return ToyPolicy(params, self.vocab, self.context_width, self.embed_dim)

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def unpack(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views of (E, W, b)."""
        v, d = self.vocab_size, self.embed_dim
        emb = self.params[: v * d].reshape(v, d)
        out = self.params[v * d : 2 * v * d].reshape(v, d)
        bias = self.params[2 * v * d :]
        return emb, out, bias

    # -- single-prefix path ------------------------------------------------

    def features(self, prefix: Sequence[int]) -> np.ndarray:
        self.vocab.check_ids(prefix)
        emb, _, _ = self.unpack()
        window = list(prefix)[-self.context_width :]
        if not window:
            return np.zeros(self.embed_dim)
        return emb[window].mean(axis=0)

    def logits(self, prefix: Sequence[int]) -> np.ndarray:
        _, out, bias = self.unpack()
        return out @ self.features(prefix) + bias

    # -- batched path (used by the sampler and the loss) -------------------

    def next_logits(self, buf: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """Logits for the token following ``buf[r, :lengths[r]]`` for every row ``r``."""
        k = self.context_width
        pos = lengths[:, None] - k + np.arange(k)[None, :]
        mask = pos >= 0
        idx = np.where(mask, np.take_along_axis(buf, np.maximum(pos, 0), axis=1), 0)
        return logits_from_windows(self, idx, mask)


def logits_from_windows(policy: ToyPolicy, idx: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise logits for context windows ``idx`` (T x k) with validity ``mask``.

    Every row is computed with elementwise products and fixed-length reductions so
    the result for a row never depends on which other rows share the batch.
    """
    emb, out, bias = policy.unpack()
    h = _window_means(emb, idx, mask)
    return (h[:, None, :] * out[None, :, :]).sum(axis=-1) + bias


def _window_means(emb: np.ndarray, idx: np.ndarray, mask: np.ndarray) -> np.ndarray:
    counts = np.maximum(mask.sum(axis=1), 1)
    return (emb[idx] * mask[..., None]).sum(axis=1) / counts[:, None]


def span_windows(
    sequences: Sequence[np.ndarray], starts: Sequence[int], k: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Context windows for every position ``p >= starts[i]`` of every sequence.

    Returns ``(idx, mask, targets)``, one row per scored token, in sequence order.
    """
    idx_rows, mask_rows, target_rows = [], [], []
    for seq, start in zip(sequences, starts):
        seq = np.asarray(seq, dtype=np.int64)
        padded = np.concatenate([np.full(k, -1, dtype=np.int64), seq])
        win = np.lib.stride_tricks.sliding_window_view(padded, k)[start : len(seq)]
        idx_rows.append(np.maximum(win, 0))
        mask_rows.append(win >= 0)
        target_rows.append(seq[start:])
    if not idx_rows:
        return np.zeros((0, k), np.int64), np.zeros((0, k), bool), np.zeros(0, np.int64)
    return np.concatenate(idx_rows), np.concatenate(mask_rows), np.concatenate(target_rows)


def forward_backward(
    policy: ToyPolicy,
    idx: np.ndarray,
    mask: np.ndarray,
    targets: np.ndarray,
    coeffs: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Token log-probs and, if ``coeffs`` is given, ``sum_t coeffs[t] * grad log p_t``."""
    emb, out, bias = policy.unpack()
    h = _window_means(emb, idx, mask)
    logits = (h[:, None, :] * out[None, :, :]).sum(axis=-1) + bias
    logp_all = log_softmax(logits)
    rows = np.arange(len(targets))
    logp = logp_all[rows, targets]
    if coeffs is None:
        return logp, None

    v, d = policy.vocab_size, policy.embed_dim
    g_logits = -np.exp(logp_all)
    g_logits[rows, targets] += 1.0
    g_logits *= coeffs[:, None]

    d_out = g_logits.T @ h
    d_bias = g_logits.sum(axis=0)
    d_h = g_logits @ out
    counts = np.maximum(mask.sum(axis=1), 1)
    per_slot = np.broadcast_to((d_h / counts[:, None])[:, None, :], idx.shape + (d,))
    d_emb = np.zeros((v, d))
    np.add.at(d_emb, idx[mask], per_slot[mask])
    return logp, np.concatenate([d_emb.ravel(), d_out.ravel(), d_bias])


# -- scalar operations ------------------------------------------------------


def _check_token(policy: ToyPolicy, token: int) -> None:
    if not 0 <= int(token) < policy.vocab_size:
        raise DomainError(f"token id {token} outside [0, {policy.vocab_size})")


def logprob(policy: ToyPolicy, prefix: Sequence[int], token: int) -> float:
    _check_token(policy, token)
    return float(log_softmax(policy.logits(prefix))[token])


def entropy(policy: ToyPolicy, prefix: Sequence[int]) -> float:
    """Next-token entropy in nats."""
    lp = log_softmax(policy.logits(prefix))
    return float(-(np.exp(lp) * lp).sum())


def grad_logprob(policy: ToyPolicy, prefix: Sequence[int], token: int) -> np.ndarray:
    """Gradient of ``log pi(token | prefix)`` with respect to the flat parameters."""
    _check_token(policy, token)
    _, out, _ = policy.unpack()
    v, d = policy.vocab_size, policy.embed_dim
    h = policy.features(prefix)
    p = np.exp(log_softmax(out @ h + policy.unpack()[2]))
    g = -p
    g[token] += 1.0

    d_emb = np.zeros((v, d))
    window = list(prefix)[-policy.context_width :]
    if window:
        dh = out.T @ g / len(window)
        for t in window:
            d_emb[t] += dh
    return np.concatenate([d_emb.ravel(), np.outer(g, h).ravel(), g])


class ScriptedPolicy:
    """Test double that emits a fixed continuation per prompt.

    ``scripts`` maps a prompt (tuple of ids) to the response ids to emit; the
    scripted token gets logit ``confidence`` and every other token gets 0. At
    positions listed in ``uniform_at`` every token gets logit 0 instead.
    """

    def __init__(
        self,
        vocab: Vocab,
        scripts: dict[tuple[int, ...], Sequence[int]],
        confidence: float = 1e4,
        uniform_at: Sequence[int] = (),
    ):
        self.vocab = vocab
        self.scripts = {tuple(k): list(v) for k, v in scripts.items()}
        self.confidence = confidence
        self.uniform_at = set(uniform_at)

    def _row(self, prefix: Sequence[int]) -> np.ndarray:
        logits = np.zeros(len(self.vocab))
        for prompt, script in self.scripts.items():
            n = len(prompt)
            if tuple(prefix[:n]) == prompt:
                offset = len(prefix) - n
                if offset in self.uniform_at:
                    return logits
                nxt = script[offset] if offset < len(script) else self.vocab.eos
                logits[nxt] = self.confidence
                return logits
        logits[self.vocab.eos] = self.confidence
        return logits

    def logits(self, prefix: Sequence[int]) -> np.ndarray:
        return self._row(list(prefix))

    def next_logits(self, buf: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        return np.stack([self._row(list(buf[r, : lengths[r]])) for r in range(len(lengths))])
