"""Reference-summary cleanup and episode acceptance rules."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .chunker import Chunk
from .aligner import AlignmentConfig, GroundingAlignment, align_summary
from .textproc import Document, IdfTable, Token, extract_bigrams, is_punct, parse

_URL = re.compile(r"^(?:[A-Za-z][A-Za-z0-9+.-]*://|www\.)\S*$", re.IGNORECASE)
_EMAIL = re.compile(r"^[^@\s]+@[^@\s]+\.[A-Za-z]{2,}$")
_MENTION = re.compile(r"^@\w+")
_HASHTAG = re.compile(r"^#\w+")
_STRIP = '.,!?;:"\'()[]'

REASONS = ("url", "email", "mention", "hashtag", "overlong")


@dataclass(frozen=True)
class FilterConfig:
    max_token_len: int = 25
    sentence_salience_min: float = 10.0
    idf_floor: float = 1.2
    min_summary_tokens: int = 10
    min_shared_bigrams_per_chunk: int = 3

    def __post_init__(self):
        for name in ("max_token_len", "sentence_salience_min", "idf_floor",
                     "min_summary_tokens", "min_shared_bigrams_per_chunk"):
            if getattr(self, name) <= 0:
                raise ValueError(f"filter.{name} must be positive")


@dataclass
class FilterReport:
    tokens_removed: Counter = field(default_factory=Counter)
    sentences_removed: int = 0
    accepted: bool = True
    reject_reason: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "tokens_removed": {r: self.tokens_removed.get(r, 0) for r in REASONS},
            "sentences_removed": self.sentences_removed,
            "accepted": self.accepted,
            "reject_reason": self.reject_reason,
        }


def classify_unit(unit: str, cfg: FilterConfig) -> Optional[str]:
    """Removal reason for a whitespace-delimited unit (edge punctuation ignored), or None."""
    core = unit.strip(_STRIP)
    if not core:
        return None
    if _URL.match(core):
        return "url"
    if _EMAIL.match(core):
        return "email"
    if _MENTION.match(core):
        return "mention"
    if _HASHTAG.match(core):
        return "hashtag"
    if len(core) > cfg.max_token_len:
        return "overlong"
    return None


def rebuild(raw: str, tokens: Sequence[Token]) -> Document:
    """Re-parse surviving tokens, keeping original adjacency and one space elsewhere."""
    parts: list[str] = []
    prev: Optional[Token] = None
    for tok in tokens:
        if prev is not None and prev.char_end != tok.char_start:
            parts.append(" ")
        parts.append(tok.text)
        prev = tok
    return parse("".join(parts))


def clean_summary_tokens(summary: Document, cfg: FilterConfig = FilterConfig()) -> tuple[Document, FilterReport]:
    report = FilterReport()
    drop: list[tuple[int, int]] = []
    for m in re.finditer(r"\S+", summary.raw):
        unit = m.group()
        reason = classify_unit(unit, cfg)
        if reason is None:
            continue
        lead = len(unit) - len(unit.lstrip(_STRIP))
        core = unit.strip(_STRIP)
        a = m.start() + lead
        drop.append((a, a + len(core)))
        report.tokens_removed[reason] += 1
    kept = [t for t in summary.tokens if not any(a <= t.char_start and t.char_end <= b for a, b in drop)]
    if len(kept) == len(summary.tokens):
        return summary, report
    return rebuild(summary.raw, kept), report


def sentence_salience(tokens: Sequence[Token], idf: IdfTable, cfg: FilterConfig = FilterConfig()) -> float:
    total = 0.0
    for t in tokens:
        if is_punct(t.text):
            continue
        score = idf.idf(t.text)
        if score > cfg.idf_floor:
            total += score
    return total


def filter_summary_sentences(summary: Document, idf: IdfTable,
                             cfg: FilterConfig = FilterConfig()) -> tuple[Document, FilterReport]:
    report = FilterReport()
    keep = []
    for i in range(len(summary.sentences)):
        if sentence_salience(summary.sentence_tokens(i), idf, cfg) < cfg.sentence_salience_min:
            report.sentences_removed += 1
        else:
            keep.append(i)
    if report.sentences_removed == 0:
        return summary, report
    return parse(" ".join(summary.sentence_text(i) for i in keep)), report


def accept_episode(transcript: Document, summary: Document, chunks: Sequence[Chunk],
                   alignment: GroundingAlignment, cfg: FilterConfig = FilterConfig()) -> tuple[bool, Optional[str]]:
    if len(summary.tokens) < cfg.min_summary_tokens:
        return False, "too_short"
    summary_bigrams = extract_bigrams(summary.tokens).keys()
    for c in sorted(set(alignment.gold_chunks)):
        shared = len(summary_bigrams & extract_bigrams(chunks[c].tokens(transcript)).keys())
        if shared < cfg.min_shared_bigrams_per_chunk:
            return False, "weak_grounding"
    return True, None


def filter_episode(transcript: Document, summary: Document, chunks: Sequence[Chunk], idf: IdfTable,
                   align_cfg: AlignmentConfig = AlignmentConfig(),
                   cfg: FilterConfig = FilterConfig()) -> tuple[Document, FilterReport]:
    """Token cleanup, sentence removal and acceptance for one episode, against a fixed IDF table."""
    cleaned, report = clean_summary_tokens(summary, cfg)
    kept, sent_report = filter_summary_sentences(cleaned, idf, cfg)
    report.sentences_removed = sent_report.sentences_removed
    if len(kept.tokens) < cfg.min_summary_tokens:
        report.accepted, report.reject_reason = False, "too_short"
        return kept, report
    ok, reason = accept_episode(transcript, kept, chunks, align_summary(chunks, transcript, kept, align_cfg), cfg)
    report.accepted, report.reject_reason = ok, reason
    return kept, report
