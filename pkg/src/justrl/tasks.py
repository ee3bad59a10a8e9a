"""Seeded synthetic math tasks and the JSONL task/benchmark format.

JSONL layout: an optional header line ``{"schema": "justrl-tasks-v1"}`` followed
by one object per line with at least ``id``, ``question`` and ``gold``
(``family`` and ``difficulty`` are optional and round-trip when present).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .errors import ConfigError
from .sampling import substream
from .vocab import BOXED_OPEN, DEFAULT_VOCAB, PROMPT_SUFFIX, Vocab

log = logging.getLogger(__name__)

SCHEMA = "justrl-tasks-v1"
FAMILIES = ("add", "sub", "mul_mod", "digit_copy")
DEFAULT_MAX_PROMPT_LEN = 64
MAX_DIFFICULTY = 18  # operands stay within int64


@dataclass(frozen=True)
class Task:
    id: str
    question: str
    prompt_tokens: tuple[int, ...]
    gold: str
    family: str = "external"
    difficulty: int = 0

    @property
    def prompt_text(self) -> str:
        return prompt_text(self.question)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "gold": self.gold,
            "family": self.family,
            "difficulty": self.difficulty,
        }


def prompt_text(question: str) -> str:
    return f"{question} {PROMPT_SUFFIX}"


def encode_prompt(question: str, vocab: Vocab = DEFAULT_VOCAB) -> tuple[int, ...]:
    return (vocab.bos, *vocab.encode(prompt_text(question)))


def ideal_response(gold: str, vocab: Vocab = DEFAULT_VOCAB) -> list[int]:
    """Token ids of ``\\boxed{gold}`` followed by EOS."""
    return vocab.encode(f"{BOXED_OPEN}{gold}}}") + [vocab.eos]


def _operand(rng, difficulty: int) -> int:
    lo = 0 if difficulty == 1 else 10 ** (difficulty - 1)
    return int(rng.integers(lo, 10**difficulty))


def _make(family: str, difficulty: int, rng) -> tuple[str, str]:
    if family == "add":
        a, b = _operand(rng, difficulty), _operand(rng, difficulty)
        return f"{a}+{b}=", str(a + b)
    if family == "sub":
        a, b = _operand(rng, difficulty), _operand(rng, difficulty)
        return f"{a}-{b}=", str(a - b)
    if family == "mul_mod":
        a, b = _operand(rng, difficulty), _operand(rng, difficulty)
        m = int(rng.integers(2, 10))
        return f"{a}*{b}%{m}=", str(a * b % m)
    if family == "digit_copy":
        digits = "".join(str(int(d)) for d in rng.integers(0, 10, size=difficulty))
        return f"copy {digits}", digits
    raise ConfigError(f"unknown task family {family!r}; choose from {', '.join(FAMILIES)}")


def generate(
    family: str,
    difficulty: int,
    count: int,
    seed: int,
    vocab: Vocab = DEFAULT_VOCAB,
    max_prompt_len: int = DEFAULT_MAX_PROMPT_LEN,
) -> list[Task]:
    if family not in FAMILIES:
        raise ConfigError(f"unknown task family {family!r}; choose from {', '.join(FAMILIES)}")
    if count < 1:
        raise ConfigError("count must be >= 1")
    if not 1 <= difficulty <= MAX_DIFFICULTY:
        raise ConfigError(f"difficulty must be in [1, {MAX_DIFFICULTY}], got {difficulty}")
    rng = substream("tasks", family, difficulty, seed)
    tasks = []
    for i in range(count):
        question, gold = _make(family, difficulty, rng)
        prompt = encode_prompt(question, vocab)
        if len(prompt) > max_prompt_len:
            raise ConfigError(f"difficulty {difficulty} produces {len(prompt)}-token prompts (> {max_prompt_len})")
        tasks.append(Task(f"{family}-d{difficulty}-s{seed}-{i:05d}", question, prompt, gold, family, difficulty))
    return tasks


def save_jsonl(tasks: Iterable[Task], path: str | Path, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(json.dumps({"schema": SCHEMA}) + "\n")
        for task in tasks:
            fh.write(json.dumps(task.to_json()) + "\n")


def load_jsonl(
    path: str | Path,
    vocab: Vocab = DEFAULT_VOCAB,
    max_prompt_len: int = DEFAULT_MAX_PROMPT_LEN,
    diagnostics: Optional[list[str]] = None,
) -> list[Task]:
    """Load tasks, skipping (and reporting) malformed or over-long lines.

    Problems are appended to ``diagnostics`` as ``"<path>:<line>: message"``
    strings and logged as warnings. Raises OSError if the file cannot be read.
    """
    if diagnostics is None:
        diagnostics = []
    tasks: list[Task] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    def note(lineno: int, msg: str) -> None:
        diagnostics.append(f"{path}:{lineno}: {msg}")
        log.warning("%s:%d: %s", path, lineno, msg)

    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            note(lineno, f"malformed JSON ({exc.msg})")
            continue
        if not isinstance(obj, dict):
            note(lineno, "expected a JSON object")
            continue
        if "schema" in obj and len(obj) == 1:
            if lineno != 1 or obj["schema"] != SCHEMA:
                note(lineno, f"unexpected schema header {obj['schema']!r}")
            continue
        missing = [k for k in ("id", "question", "gold") if k not in obj]
        if missing:
            note(lineno, f"missing field(s): {', '.join(missing)}")
            continue
        if str(obj["id"]) in seen:
            note(lineno, f"duplicate id {obj['id']!r}")
            continue
        question, gold = str(obj["question"]), str(obj["gold"])
        prompt = encode_prompt(question, vocab)
        if len(prompt) > max_prompt_len:
            note(lineno, f"prompt has {len(prompt)} tokens, limit is {max_prompt_len}")
            continue
        try:
            difficulty = int(obj.get("difficulty", 0))
        except (TypeError, ValueError):
            note(lineno, "difficulty is not an integer")
            continue
        seen.add(str(obj["id"]))
        tasks.append(Task(str(obj["id"]), question, prompt, gold, str(obj.get("family", "external")), difficulty))
    return tasks
