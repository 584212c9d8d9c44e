"""Interactive prompt construction for caption refinement.

A rough caption plus a target caption yield a three-line prompt that tells
a downstream generator which objects the rough caption missed. Nouns are
found by lexicon matching (longest match first) rather than part-of-speech
tagging, filtered against the rough caption, and templated. During
training-style use, prompts are randomly replaced by a padding sentinel —
always when the rough caption already equals the target.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .rng import SeededRng

PADDING_MARKER = "<PAD-PROMPT>"
EMPTY_PROMPT_PHRASE = "nothing new"
MAX_PHRASE_TOKENS = 3


@dataclass(frozen=True)
class NounLexicon:
    """Lowercase noun phrases of one to three tokens."""

    entries: frozenset[str]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValidationError("lexicon is empty")
        canon = set()
        for phrase in self.entries:
            cleaned = " ".join(phrase.split()).lower()
            if not cleaned:
                raise ValidationError("lexicon contains a blank phrase")
            if len(cleaned.split()) > MAX_PHRASE_TOKENS:
                raise ValidationError(
                    f"lexicon phrase {phrase!r} exceeds {MAX_PHRASE_TOKENS} tokens"
                )
            canon.add(cleaned)
        object.__setattr__(self, "entries", frozenset(canon))


@dataclass(frozen=True)
class PromptRecord:
    reference: str
    candidates: tuple[str, ...]
    filtered: tuple[str, ...]
    target: str
    serialized: str


def load_lexicon(path: str | Path) -> NounLexicon:
    """One phrase per line; blank lines and '#' comments ignored."""
    entries = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.add(line)
    return NounLexicon(entries=frozenset(entries))


def tokenize_caption(text: str) -> list[str]:
    """Lowercase, whitespace-split, ASCII punctuation stripped per token."""
    tokens = []
    for raw in text.lower().split():
        token = raw.strip(string.punctuation)
        if token:
            tokens.append(token)
    return tokens


def extract_candidates(gt: str, lexicon: NounLexicon) -> list[str]:
    """Lexicon phrases found in the target caption.

    Scans the token sequence left to right; at each position the longest
    matching lexicon phrase wins and consumes its tokens (no overlaps).
    Results are deduplicated, in order of first occurrence.
    """
    tokens = tokenize_caption(gt)
    found: list[str] = []
    seen: set[str] = set()
    i = 0
    while i < len(tokens):
        match = None
        for width in range(min(MAX_PHRASE_TOKENS, len(tokens) - i), 0, -1):
            phrase = " ".join(tokens[i : i + width])
            if phrase in lexicon.entries:
                match = phrase
                break
        if match is None:
            i += 1
            continue
        if match not in seen:
            seen.add(match)
            found.append(match)
        i += len(match.split())
    return found


def _contains_contiguous(haystack: list[str], needle: list[str]) -> bool:
    if not needle or len(needle) > len(haystack):
        return False
    for i in range(len(haystack) - len(needle) + 1):
        if haystack[i : i + len(needle)] == needle:
            return True
    return False


def filter_candidates(candidates: list[str], rough: str) -> list[str]:
    """Drop phrases the rough caption already mentions (contiguously)."""
    rough_tokens = tokenize_caption(rough)
    return [
        phrase
        for phrase in candidates
        if not _contains_contiguous(rough_tokens, phrase.split())
    ]


def _phrase_list(phrases: list[str]) -> str:
    if not phrases:
        return EMPTY_PROMPT_PHRASE
    if len(phrases) == 1:
        return phrases[0]
    return ", ".join(phrases[:-1]) + " and " + phrases[-1]


def build_full_prompt(reference: str, phrases: list[str], target: str) -> str:
    """Three lines: the rough caption, the object hint, the target."""
    return (
        f"Reference: {reference}\n"
        f"Prompt: An image contains {_phrase_list(phrases)}.\n"
        f"Prediction: {target}"
    )


def stage2_prompt_or_padding(
    rough: str,
    gt: str,
    lexicon: NounLexicon,
    p: float = 0.1,
    rng: SeededRng | None = None,
) -> PromptRecord:
    """Full prompt, or the padding sentinel.

    Padding happens when a Bernoulli(p) draw fires or when the rough
    caption tokenizes identically to the target. The draw is consumed
    before the equality check so a fixed rng stream assigns the same draw
    to the same record position regardless of content.
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p must be in [0, 1], got {p}")
    if rng is None:
        rng = SeededRng(0)
    draw = float(rng.uniform(()))
    candidates = tuple(extract_candidates(gt, lexicon))
    filtered = tuple(filter_candidates(list(candidates), rough))
    pad = draw < p or tokenize_caption(rough) == tokenize_caption(gt)
    serialized = (
        PADDING_MARKER if pad else build_full_prompt(rough, list(filtered), gt)
    )
    return PromptRecord(
        reference=rough,
        candidates=candidates,
        filtered=filtered,
        target=gt,
        serialized=serialized,
    )
