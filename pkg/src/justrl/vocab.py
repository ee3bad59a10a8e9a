"""Small token vocabulary used by the toy policy and the task encoders."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DomainError

PROMPT_SUFFIX = "Please reason step by step, and put your final answer within \\boxed{}."

BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
SUFFIX = "<suffix>"
BOXED_OPEN = "\\boxed{"
BOXED_CLOSE = "}"

MAX_VOCAB = 64

# Order is significant: nucleus ties are broken by token id.
DEFAULT_TOKENS: tuple[str, ...] = (
    BOS,
    EOS,
    UNK,
    *[str(d) for d in range(10)],
    BOXED_OPEN,
    BOXED_CLOSE,
    "{",
    "+",
    "-",
    "*",
    "%",
    "=",
    "/",
    ".",
    " ",
    "?",
    "copy",
    SUFFIX,
)

_SPECIAL_TEXT = {BOS: "", EOS: "", UNK: "�", SUFFIX: PROMPT_SUFFIX}


@dataclass(frozen=True)
class Vocab:
    """Dense id <-> string mapping with a greedy longest-match tokenizer."""

    tokens: tuple[str, ...] = DEFAULT_TOKENS
    _index: dict[str, int] = field(init=False, repr=False, compare=False)
    _pieces: tuple[tuple[str, int], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.tokens) > MAX_VOCAB:
            raise DomainError(f"vocabulary has {len(self.tokens)} tokens, limit is {MAX_VOCAB}")
        if len(set(self.tokens)) != len(self.tokens):
            raise DomainError("duplicate tokens in vocabulary")
        for required in (BOS, EOS, UNK):
            if required not in self.tokens:
                raise DomainError(f"vocabulary is missing {required}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})
        pieces = [(_SPECIAL_TEXT.get(t, t), i) for i, t in enumerate(self.tokens)]
        pieces = sorted((p for p in pieces if p[0]), key=lambda p: -len(p[0]))
        object.__setattr__(self, "_pieces", tuple(pieces))

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self._index[token]

    @property
    def bos(self) -> int:
        return self._index[BOS]

    @property
    def eos(self) -> int:
        return self._index[EOS]

    @property
    def unk(self) -> int:
        return self._index[UNK]

    @property
    def digit_ids(self) -> list[int]:
        return [self._index[str(d)] for d in range(10)]

    def text_of(self, token_id: int) -> str:
        self.check_ids([token_id])
        tok = self.tokens[token_id]
        return _SPECIAL_TEXT.get(tok, tok)

    def check_ids(self, ids: Iterable[int]) -> None:
        v = len(self.tokens)
        for i in ids:
            if not 0 <= int(i) < v:
                raise DomainError(f"token id {i} outside [0, {v})")

    def encode(self, text: str) -> list[int]:
        """Greedy longest-match tokenization; unmatched characters become UNK."""
        out: list[int] = []
        pos = 0
        while pos < len(text):
            for piece, tid in self._pieces:
                if text.startswith(piece, pos):
                    out.append(tid)
                    pos += len(piece)
                    break
            else:
                out.append(self.unk)
                pos += 1
        return out

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.text_of(int(i)) for i in ids)


DEFAULT_VOCAB = Vocab()
