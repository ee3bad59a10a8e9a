"""Rule-based answer verification producing binary rewards.

Two profiles are provided. ``strict`` compares normalized strings and, failing
that, exact rationals. ``lenient`` accepts everything ``strict`` accepts and
additionally strips a few cosmetic wrappers (``\\text{}``, degree marks,
percent signs, ``x =`` prefixes) and compares numbers with a relative
tolerance. Neither profile does any symbolic algebra: ``2x+2`` and ``2(x+1)``
are different answers.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

REWARD_CORRECT = 1.0
REWARD_INCORRECT = -1.0


class Status(str, enum.Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    EXTRACTION_FAILED = "extraction_failed"


@dataclass(frozen=True)
class Verdict:
    status: Status
    extracted: Optional[str]
    reward: float

    @property
    def correct(self) -> bool:
        return self.status is Status.CORRECT

    def to_dict(self) -> dict:
        return {"status": self.status.value, "extracted": self.extracted, "reward": self.reward}


# -- extraction ---------------------------------------------------------------

_BOXED = "\\boxed"


def extract_boxed(text: str) -> Optional[str]:
    """Contents of the last balanced ``\\boxed{...}`` group, or None.

    Occurrences are tried from the right; the first one whose braces balance
    wins, so a trailing unterminated box falls back to an earlier complete one.
    """
    if not isinstance(text, str):
        return None
    pos = text.rfind(_BOXED)
    while pos != -1:
        i = pos + len(_BOXED)
        while i < len(text) and text[i] in " \t":
            i += 1
        if i < len(text) and text[i] == "{":
            depth = 0
            for j in range(i, len(text)):
                c = text[j]
                if c == "{":
                    depth += 1
                elif c == "}":
                    depth -= 1
                    if depth == 0:
                        return text[i + 1 : j]
        pos = text.rfind(_BOXED, 0, pos)
    return None


# -- normalization ------------------------------------------------------------

_LEFT_RIGHT = re.compile(r"\\(?:left|right)(?![A-Za-z])")
_DFRAC = re.compile(r"\\[dt]frac(?![A-Za-z])")
_THOUSANDS = re.compile(r"^[+-]?[0-9]{1,3}(?:(?:\{,\}|,)[0-9]{3})+(?:\.[0-9]+)?$")
_WS = re.compile(r"\s+")
_WORD = re.compile(r"(?<![\\A-Za-z])[A-Za-z]{2,}(?![A-Za-z])")
_FRAC = re.compile(r"\\frac\{\s*(-?[0-9]+)\s*\}\{\s*(-?[0-9]+)\s*\}")

_TEXT_WRAP = re.compile(r"\\(?:text|mathrm|textbf|mbox)\{([^{}]*)\}")
_DEGREES = re.compile(r"\^\s*\{?\\circ\}?|°")
_PERCENT = re.compile(r"\\?%$")
_ASSIGN = re.compile(r"^[A-Za-z]\s*=\s*(?=\S)")


def _strip_outer(s: str) -> str:
    return s.strip().strip("$").strip()


def _remove_left_right(s: str) -> str:
    return _LEFT_RIGHT.sub("", s)


def _unify_frac(s: str) -> str:
    return _DFRAC.sub(r"\\frac", s)


def _strip_thousands(s: str) -> str:
    if _THOUSANDS.match(s):
        return s.replace("{,}", "").replace(",", "")
    return s


def _collapse_ws(s: str) -> str:
    # whitespace is kept (as one space) only between two word characters
    parts = _WS.split(s)
    out = parts[0]
    for part in parts[1:]:
        if out and part and out[-1].isalnum() and part[0].isalnum():
            out += " "
        out += part
    return out


def _lower_words(s: str) -> str:
    return _WORD.sub(lambda m: m.group(0).lower(), s)


def _canonical_frac(s: str) -> str:
    return _FRAC.sub(lambda m: f"{m.group(1)}/{m.group(2)}", s)


def _unwrap_text(s: str) -> str:
    return _TEXT_WRAP.sub(lambda m: m.group(1), s)


def _drop_degrees(s: str) -> str:
    return _DEGREES.sub("", s)


def _drop_percent(s: str) -> str:
    return _PERCENT.sub("", s)


def _drop_assignment(s: str) -> str:
    return _ASSIGN.sub("", s)


def _drop_trailing_period(s: str) -> str:
    return s[:-1] if s.endswith(".") and len(s) > 1 else s


Rule = Callable[[str], str]

BASE_RULES: tuple[Rule, ...] = (
    _strip_outer,
    _remove_left_right,
    _unify_frac,
    _strip_thousands,
    _collapse_ws,
    _lower_words,
    _canonical_frac,
)

LENIENT_EXTRA_RULES: tuple[Rule, ...] = (
    _unwrap_text,
    _drop_degrees,
    _drop_percent,
    _drop_assignment,
    _drop_trailing_period,
)


@dataclass(frozen=True)
class VerifierProfile:
    name: str
    numeric_tolerance: Optional[float]  # None: exact rational comparison
    rules: tuple[Rule, ...]


STRICT = VerifierProfile("strict", None, BASE_RULES)
LENIENT = VerifierProfile("lenient", 1e-4, BASE_RULES + LENIENT_EXTRA_RULES)
PROFILES = {"strict": STRICT, "lenient": LENIENT}


def get_profile(profile: VerifierProfile | str) -> VerifierProfile:
    if isinstance(profile, VerifierProfile):
        return profile
    try:
        return PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown verifier profile {profile!r}; choose from {sorted(PROFILES)}") from None


def normalize(answer: str, profile: VerifierProfile | str = STRICT) -> str:
    """Apply the profile's rules in order, repeating until nothing changes."""
    rules = get_profile(profile).rules
    s = answer
    # every rule either shortens the string or is idempotent, so this terminates quickly
    for _ in range(len(answer) + 2):
        prev = s
        for rule in rules:
            s = rule(s)
        if s == prev:
            break
    return s


# -- numeric comparison -------------------------------------------------------

_INT = r"[+-]?[0-9]+"
_DEC = r"[+-]?(?:[0-9]+\.[0-9]*|\.[0-9]+|[0-9]+)"
_NUMBER = re.compile(rf"^({_DEC})$")
_RATIO = re.compile(rf"^({_INT})/({_INT})$")


def parse_number(s: str) -> Optional[Fraction]:
    """Exact value of an integer, terminating decimal, or ``a/b`` string."""
    if len(s) > 200:
        return None
    m = _RATIO.match(s)
    if m:
        den = int(m.group(2))
        if den == 0:
            return None
        return Fraction(int(m.group(1)), den)
    m = _NUMBER.match(s)
    if m:
        return Fraction(m.group(1))
    return None


def _numbers_match(a: Fraction, b: Fraction, tolerance: Optional[float]) -> bool:
    if tolerance is None:
        return a == b
    # scale by the larger magnitude so the comparison is symmetric
    scale = max(Fraction(1), abs(a), abs(b))
    return abs(a - b) <= Fraction(repr(tolerance)) * scale


def _compare(pred: str, gold: str, profile: VerifierProfile) -> tuple[bool, str]:
    p = normalize(pred, profile)
    g = normalize(gold, profile)
    if p == g:
        return True, p
    a, b = parse_number(p), parse_number(g)
    if a is not None and b is not None and _numbers_match(a, b, profile.numeric_tolerance):
        return True, p
    return False, p


def verify(model_output: str, gold: str, profile: VerifierProfile | str = STRICT) -> Verdict:
    """Score a model output against a gold answer; never raises for string inputs."""
    profile = get_profile(profile)
    extracted = extract_boxed(model_output)
    if extracted is None:
        return Verdict(Status.EXTRACTION_FAILED, None, REWARD_INCORRECT)
    ok, canon = _compare(extracted, gold, STRICT)
    if not ok and profile is not STRICT:
        ok, canon_l = _compare(extracted, gold, profile)
        if ok:
            canon = canon_l
    if ok:
        return Verdict(Status.CORRECT, canon, REWARD_CORRECT)
    return Verdict(Status.INCORRECT, canon, REWARD_INCORRECT)
