"""Grounded beam-search decoding.

Decoding starts in chunk 0. After every emitted token the switch predictor
is consulted; above the threshold the current segment is closed and the
selector picks the next grounding chunk (possibly the same one). Switch and
chunk decisions are taken per hypothesis and are deterministic (argmax), so
the beam only ranges over tokens.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import diffkernel as dk
from .chunker import Chunk
from .diffkernel import Tensor
from .model import (
    BOS,
    PAD,
    SEP,
    UNK,
    chunk_vector,
    decode_hidden,
    encode_chunk,
    selector_distribution,
    switch_probability,
    vocab_logits,
)
from .textproc import Document, detokenize
from .training import GroundedModel


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 4
    length_penalty: float = 2.0
    switch_threshold: float = 0.5
    max_summary_tokens: int = 128
    required_chunks: Optional[frozenset[int]] = None

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError(f"decode.beam_size must be >= 1, got {self.beam_size}")
        if not 0.0 < self.switch_threshold <= 1.0:
            raise ValueError(f"decode.switch_threshold must lie in (0, 1], got {self.switch_threshold}")
        if self.length_penalty < 0:
            raise ValueError(f"decode.length_penalty must be >= 0, got {self.length_penalty}")
        if self.max_summary_tokens < 1:
            raise ValueError("decode.max_summary_tokens must be >= 1")
        if self.required_chunks is not None:
            object.__setattr__(self, "required_chunks", frozenset(int(c) for c in self.required_chunks))


@dataclass
class BeamHypothesis:
    tokens: list[int]
    logprob: float
    chunk: int
    segments: list[tuple[int, int, int]] = field(default_factory=list)  # (start, end, chunk)
    seg_start: int = 0
    finished: bool = False
    finish_step: int = -1
    switches: int = 0

    def closed_segments(self) -> list[tuple[int, int, int]]:
        """Segments including the still-open one, if it holds tokens."""
        segs = list(self.segments)
        if len(self.tokens) > self.seg_start:
            segs.append((self.seg_start, len(self.tokens), self.chunk))
        return segs

    def visited(self) -> set[int]:
        return {c for _, _, c in self.closed_segments()}


@dataclass
class GroundedSegment:
    text: str
    chunk_index: int
    sent_range: tuple[int, int]
    tokens: list[str] = field(default_factory=list)


@dataclass
class GroundedSummary:
    segments: list[GroundedSegment]
    token_count: int
    chunks_encoded: int = 0
    switch_events: int = 0

    @property
    def chunk_sequence(self) -> list[int]:
        return [s.chunk_index for s in self.segments]

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.segments)

    def check(self, n_chunks: int) -> None:
        """Raise if the tethering contract is broken."""
        if self.segments and self.segments[0].chunk_index != 0:
            raise AssertionError("first segment must be grounded in chunk 0")
        for s in self.segments:
            if not 0 <= s.chunk_index < n_chunks:
                raise AssertionError(f"segment grounded in unknown chunk {s.chunk_index}")


def sequence_score(logprob: float, length: int, penalty: float) -> float:
    return logprob / (max(1, length) ** penalty)


def rank_hypotheses(hyps: Sequence[BeamHypothesis], cfg: DecodeConfig) -> list[BeamHypothesis]:
    """Best first by length-normalized log-probability; earlier finishers win ties."""
    if not hyps:
        raise ValueError("rank_hypotheses: no hypotheses")
    req = cfg.required_chunks

    def key(h: BeamHypothesis):
        missing = bool(req) and not req <= h.visited()
        return (missing, -sequence_score(h.logprob, len(h.tokens), cfg.length_penalty), h.finish_step)

    return sorted(hyps, key=key)


class ChunkMemory:
    """Lazily encoded chunk states for the decoder, plus pooled chunk vectors for the selector."""

    def __init__(self, model: GroundedModel, chunk_ids: Sequence[Sequence[int]]):
        self.model = model
        self.chunk_ids = chunk_ids
        self._states: dict[int, Tensor] = {}
        self._vectors: Optional[Tensor] = None

    def states(self, c: int) -> Tensor:
        if c not in self._states:
            self._states[c] = encode_chunk(self.model.params, self.model.cfg, self.chunk_ids[c])
        return self._states[c]

    @property
    def encoded(self) -> set[int]:
        return set(self._states)

    def vectors(self) -> Tensor:
        if self._vectors is None:
            P, cfg = self.model.params, self.model.cfg
            self._vectors = dk.concat(
                [chunk_vector(self._states[c] if c in self._states else encode_chunk(P, cfg, ids))
                 for c, ids in enumerate(self.chunk_ids)], axis=0)
        return self._vectors


def _hypothesis_inputs(h: BeamHypothesis, memory: ChunkMemory, bos: int):
    """Decoder inputs, segment-relative positions and masked multi-chunk memory for the next step."""
    seg_rows = []
    for a, b, c in h.segments:
        seg_rows.append((a, b, c))
    seg_rows.append((h.seg_start, len(h.tokens) + 1, h.chunk))
    used = sorted({c for _, _, c in seg_rows})
    offsets = {}
    mats = []
    row = 0
    for c in used:
        st = memory.states(c)
        offsets[c] = (row, row + st.shape[0])
        row += st.shape[0]
        mats.append(st)
    mem = mats[0] if len(mats) == 1 else dk.concat(mats, axis=0)
    n = len(h.tokens) + 1
    inputs = [bos] + h.tokens
    rel = np.zeros(n, dtype=np.int64)
    mask = np.zeros((n, row), dtype=bool)
    # position t predicts token t; segment of token t decides its chunk
    for a, b, c in seg_rows:
        for t in range(a, min(b, n)):
            rel[t] = t - a
            lo, hi = offsets[c]
            mask[t, lo:hi] = True
    return inputs, rel, mem, mask


def generate(model: GroundedModel, transcript: Document, chunks: Sequence[Chunk],
             cfg: DecodeConfig = DecodeConfig()) -> GroundedSummary:
    if not chunks:
        raise ValueError("generate: empty chunk list")
    if not model.finite():
        raise ValueError("generate: model parameters contain non-finite values")
    vocab = model.vocab
    P = model.params
    chunk_ids = [vocab.encode([t.text for t in c.tokens(transcript)]) for c in chunks]
    memory = ChunkMemory(model, chunk_ids)
    banned = [vocab.stoi[t] for t in (PAD, UNK, BOS)]
    sep = vocab.sep
    live = [BeamHypothesis(tokens=[], logprob=0.0, chunk=0)]
    done: list[BeamHypothesis] = []
    with dk.no_grad():
        for step in range(cfg.max_summary_tokens + 1):
            cands = []
            hidden_of = []
            for hi, h in enumerate(live):
                inputs, rel, mem, mask = _hypothesis_inputs(h, memory, vocab.bos)
                hid = decode_hidden(P, model.cfg, inputs, rel, mem, mask)
                last = dk.slice_rows(hid, hid.shape[0] - 1, hid.shape[0])
                hidden_of.append(last)
                logp = dk.log_softmax(vocab_logits(P, last)).data[0].copy()
                logp[banned] = -np.inf
                if step == cfg.max_summary_tokens:
                    keep = [sep]
                else:
                    keep = np.argsort(-logp, kind="stable")[:cfg.beam_size]
                for tok in keep:
                    cands.append((h.logprob + float(logp[tok]), hi, int(tok)))
            cands.sort(key=lambda x: (-x[0], x[1], x[2]))
            nxt = []
            for score, hi, tok in cands:
                h = live[hi]
                if tok == sep:
                    done.append(BeamHypothesis(list(h.tokens), score, h.chunk, list(h.segments), h.seg_start,
                                               True, step, h.switches))
                else:
                    nxt.append(_extend(model, memory, h, hidden_of[hi], tok, score, cfg))
                if len(nxt) == cfg.beam_size or len(done) >= cfg.beam_size:
                    break
            live = nxt
            if len(done) >= cfg.beam_size or not live:
                break
    pool = done or live
    best = rank_hypotheses(pool, cfg)[0]
    segs = []
    for a, b, c in best.closed_segments():
        toks = vocab.decode(best.tokens[a:b])
        segs.append(GroundedSegment(detokenize(toks), c, chunks[c].sentence_range, toks))
    return GroundedSummary(segs, len(best.tokens), len(memory.encoded), best.switches)


def _extend(model: GroundedModel, memory: ChunkMemory, h: BeamHypothesis, last: Tensor, tok: int,
            score: float, cfg: DecodeConfig) -> BeamHypothesis:
    P = model.params
    new = BeamHypothesis(h.tokens + [tok], score, h.chunk, list(h.segments), h.seg_start, False, -1, h.switches)
    emb = dk.take_rows(P["emb"], [tok])
    p_switch = switch_probability(P, last, emb).item()
    if p_switch > cfg.switch_threshold:
        new.segments.append((new.seg_start, len(new.tokens), new.chunk))
        new.seg_start = len(new.tokens)
        dist = selector_distribution(P, memory.vectors(), last).data[0]
        new.chunk = int(np.argmax(dist))
        new.switches += 1
    return new


@dataclass
class SelectionPrediction:
    chunks: list[int]
    switch: list[bool]


def predict_selection(model: GroundedModel, ep, threshold: float = 0.5) -> SelectionPrediction:
    """Teacher-forced chunk choices and switch decisions on a reference summary.

    The first segment is always chunk 0; later segments take the selector's
    argmax given the gold prefix. Switch points are predicted per token.
    """
    from .model import episode_forward

    with dk.no_grad():
        out = episode_forward(model.params, model.cfg, ep, model.vocab.bos, model.vocab.sep)
    chunks = [0] + [int(np.argmax(row)) for row in out.selector_probs[1:]]
    return SelectionPrediction(chunks, [bool(p > threshold) for p in out.switch_probs])
