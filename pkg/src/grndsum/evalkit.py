"""Summary metrics: ROUGE, n-gram reuse, front-half statistics and selection scores.

Everything here works on plain token sequences. Callers decide on
normalization (the harness lowercases and drops punctuation); no stemming
or stopword removal happens in this module.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: float, n_cand: int, n_ref: int) -> "RougeScore":
        p = overlap / n_cand if n_cand else 0.0
        r = overlap / n_ref if n_ref else 0.0
        return cls(p, r, _f1(p, r))


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1) -> RougeScore:
    cand, ref = Counter(ngrams(candidate, n)), Counter(ngrams(reference, n))
    overlap = sum((cand & ref).values())
    return RougeScore.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


def ngram_reuse(summary: Sequence[str], sources: Sequence[Sequence[str]], n: int) -> float:
    """Percentage of summary n-gram occurrences present in any source.

    ``sources`` is a list of token sequences (chunks, or the whole transcript
    as a single entry). N-grams never span two sources, so reuse against the
    full transcript is never below reuse against a subset of its chunks.
    """
    grams = ngrams(summary, n)
    if not grams:
        return 0.0
    pool = set()
    for src in sources:
        pool.update(ngrams(src, n))
    return 100.0 * sum(g in pool for g in grams) / len(grams)


def front_half_fraction(segments: Sequence[tuple[Sequence[str], Sequence[str]]], n: int = 3) -> Optional[float]:
    """Share of matched segment n-grams whose first chunk occurrence lies in the chunk's front half.

    ``segments`` pairs each summary segment's tokens with its grounding chunk's
    tokens. Returns None when no n-gram matches.
    """
    matched = front = 0
    for seg, chunk_tokens in segments:
        first: dict[tuple[str, ...], int] = {}
        for i, g in enumerate(ngrams(chunk_tokens, n)):
            first.setdefault(g, i)
        half = len(chunk_tokens) // 2
        for g in ngrams(seg, n):
            if g in first:
                matched += 1
                front += first[g] < half
    return front / matched if matched else None


@dataclass
class GroundingStats:
    chunk_accuracy: float
    switch_precision: float
    switch_recall: float
    switch_f1: float
    avg_switch_points: float
    avg_gold_switch_points: float
    same_chunk_rate: Optional[float]
    unique_chunks_per_summary: float
    ngram_reuse: dict[int, float] = field(default_factory=dict)
    front_half_fraction: Optional[float] = None


def selection_metrics(pred_chunks: Sequence[Sequence[int]], gold_chunks: Sequence[Sequence[int]],
                      pred_switch: Sequence[Sequence[bool]], gold_switch: Sequence[Sequence[bool]]) -> GroundingStats:
    """Corpus-level chunk-selection and switch-point statistics.

    Each argument holds one entry per episode. Chunk accuracy and switch
    P/R/F pool all segments and token positions; the per-summary statistics
    are averaged over episodes and describe the predictions.
    """
    if len(pred_chunks) != len(gold_chunks) or len(pred_switch) != len(gold_switch):
        raise ValueError("selection_metrics: prediction and gold episode counts differ")
    if len(pred_chunks) != len(pred_switch):
        raise ValueError("selection_metrics: chunk and switch episode counts differ")
    hits = total = 0
    tp = fp = fn = 0
    transitions = same = 0
    unique = []
    for e, (pc, gc, ps, gs) in enumerate(zip(pred_chunks, gold_chunks, pred_switch, gold_switch)):
        if len(pc) != len(gc):
            raise ValueError(f"selection_metrics: episode {e} has {len(pc)} predicted and {len(gc)} gold segments")
        if len(ps) != len(gs):
            raise ValueError(f"selection_metrics: episode {e} has {len(ps)} predicted and {len(gs)} gold switch labels")
        hits += sum(int(a) == int(b) for a, b in zip(pc, gc))
        total += len(gc)
        for p, g in zip(ps, gs):
            tp += p and g
            fp += p and not g
            fn += g and not p
        transitions += max(0, len(pc) - 1)
        same += sum(a == b for a, b in zip(pc, pc[1:]))
        unique.append(len(set(pc)))
    n_ep = len(pred_chunks)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return GroundingStats(
        chunk_accuracy=hits / total if total else 0.0,
        switch_precision=prec,
        switch_recall=rec,
        switch_f1=_f1(prec, rec),
        avg_switch_points=sum(sum(map(bool, s)) for s in pred_switch) / n_ep if n_ep else 0.0,
        avg_gold_switch_points=sum(sum(map(bool, s)) for s in gold_switch) / n_ep if n_ep else 0.0,
        same_chunk_rate=same / transitions if transitions else None,
        unique_chunks_per_summary=sum(unique) / n_ep if n_ep else 0.0,
    )


def backward_transitions(chunks: Sequence[int]) -> int:
    """Number of consecutive segment pairs that move to an earlier chunk."""
    return sum(b < a for a, b in zip(chunks, chunks[1:]))
