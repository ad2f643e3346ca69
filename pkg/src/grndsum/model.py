"""Chunk-grounded encoder-decoder, chunk selector and switch-point predictor.

One small pre-LN transformer encoder is shared by the generator (token
states attended by the decoder) and the selector (mean-pooled chunk
vectors). Decoder positions restart at zero at the beginning of every
summary segment, so position ``i`` of a segment lines up with position
``i`` of its grounding chunk.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import diffkernel as dk
from .diffkernel import Tensor

log = logging.getLogger(__name__)

PAD, UNK, BOS, SEP = "[pad]", "[unk]", "[bos]", "[sep]"
SPECIALS = (PAD, UNK, BOS, SEP)
CHECKPOINT_FORMAT = "grndsum-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 0
    d_model: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    attention_heads: int = 4
    ffn_dim: int = 128
    lowrank_r: int = 8
    max_positions: int = 512
    alpha: float = 0.1
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.attention_heads:
            raise ValueError(f"model.d_model ({self.d_model}) must be divisible by model.attention_heads "
                             f"({self.attention_heads})")
        if self.alpha < 0:
            raise ValueError(f"model.alpha must be >= 0, got {self.alpha}")
        if len(self.loss_weights) != 3:
            raise ValueError("model.loss_weights needs three entries (gen, sel, switch)")
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, texts: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        counts = Counter(t for seq in texts for t in seq)
        words = sorted((w for w, c in counts.items() if c >= min_count and w not in SPECIALS),
                       key=lambda w: (-counts[w], w))
        return cls(list(SPECIALS) + words)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(t, unk) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    @property
    def bos(self) -> int:
        return self.stoi[BOS]

    @property
    def sep(self) -> int:
        return self.stoi[SEP]


@dataclass
class SelectorOutput:
    p: np.ndarray
    s: np.ndarray


@dataclass
class LossReport:
    total: float
    generation: float
    selector_ce: float
    regularizer: float
    switch: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpisodeTensors:
    """Integer-encoded training instance: chunk ids, summary ids and gold labels."""

    chunk_ids: list[list[int]]
    summary_ids: list[int]
    segments: list[tuple[int, int]]
    gold_chunks: list[int]
    switch_labels: list[bool]
    importance_labels: list[bool] = field(default_factory=list)


# --- parameters -------------------------------------------------------------------


def init_params(cfg: ModelConfig) -> dict[str, Tensor]:
    rng = np.random.default_rng(cfg.seed)
    d, f, r, v = cfg.d_model, cfg.ffn_dim, cfg.lowrank_r, cfg.vocab_size
    if v < len(SPECIALS):
        raise ValueError("model.vocab_size must include the special tokens")
    n_layers = cfg.encoder_layers + cfg.decoder_layers
    out_scale = 1.0 / math.sqrt(2 * max(n_layers, 1))
    p: dict[str, np.ndarray] = {}

    def w(name, shape, std):
        p[name] = rng.normal(0.0, std, size=shape)

    def zeros(name, shape):
        p[name] = np.zeros(shape)

    def ln(prefix):
        p[prefix + ".g"] = np.ones(d)
        zeros(prefix + ".b", (d,))

    def lin(prefix, n_in, n_out, scale=1.0):
        w(prefix + ".W", (n_in, n_out), scale / math.sqrt(n_in))
        zeros(prefix + ".b", (n_out,))

    w("emb", (v, d), 0.3)
    w("enc_pos", (cfg.max_positions, d), 0.3)
    w("dec_pos", (cfg.max_positions, d), 0.3)
    for l in range(cfg.encoder_layers):
        pre = f"enc{l}"
        ln(pre + ".ln1")
        lin(pre + ".qkv", d, 3 * d)
        lin(pre + ".o", d, d, out_scale)
        ln(pre + ".ln2")
        lin(pre + ".ff1", d, f)
        lin(pre + ".ff2", f, d, out_scale)
    ln("enc.lnf")
    for l in range(cfg.decoder_layers):
        pre = f"dec{l}"
        ln(pre + ".ln1")
        lin(pre + ".qkv", d, 3 * d)
        lin(pre + ".o", d, d, out_scale)
        ln(pre + ".ln2")
        lin(pre + ".xq", d, d)
        lin(pre + ".xkv", d, 2 * d)
        lin(pre + ".xo", d, d, out_scale)
        ln(pre + ".ln3")
        lin(pre + ".ff1", d, f)
        lin(pre + ".ff2", f, d, out_scale)
    ln("dec.lnf")
    lin("out", d, v)
    # selector: importance FFN1, relevance FFN2 + low-rank bilinear, switch FFN3
    lin("ffn1.h", d, d)
    lin("ffn1.o", d, 1)
    lin("ffn2.hx", d, d)
    w("ffn2.hy.W", (d, d), 1.0 / math.sqrt(d))
    lin("ffn2.o", d, 1)
    w("U", (d, r), 1.0 / math.sqrt(d))
    w("V", (d, r), 1.0 / math.sqrt(d))
    lin("ffn3.h", d, d)
    w("ffn3.e.W", (d, d), 1.0 / math.sqrt(d))
    lin("ffn3.o", d, 1)
    return {k: Tensor(a, requires_grad=True, name=k) for k, a in p.items()}


def _lin(P, prefix, x: Tensor) -> Tensor:
    return dk.add(dk.matmul(x, P[prefix + ".W"]), P[prefix + ".b"])


def _ln(P, prefix, x: Tensor) -> Tensor:
    return dk.layer_norm(x, P[prefix + ".g"], P[prefix + ".b"])


def _ffn(P, prefix, x: Tensor) -> Tensor:
    return _lin(P, prefix + ".ff2", dk.relu(_lin(P, prefix + ".ff1", x)))


def _self_attention(P, prefix, x: Tensor, heads: int, mask: np.ndarray) -> Tensor:
    d = x.shape[1]
    qkv = _lin(P, prefix + ".qkv", x)
    q = dk.slice_cols(qkv, 0, d)
    k = dk.slice_cols(qkv, d, 2 * d)
    v = dk.slice_cols(qkv, 2 * d, 3 * d)
    return _lin(P, prefix + ".o", dk.attention(q, k, v, heads, mask))


def _positions(cfg: ModelConfig, pos: Sequence[int]) -> np.ndarray:
    return np.minimum(np.asarray(pos, dtype=np.int64), cfg.max_positions - 1)


# --- encoder / decoder ----------------------------------------------------------


def encode_chunks(P, cfg: ModelConfig, chunk_ids: Sequence[Sequence[int]]) -> tuple[Tensor, list[tuple[int, int]]]:
    """Encode several chunks in one block-diagonal pass.

    Returns the stacked hidden states and each chunk's row range in them.
    """
    if not chunk_ids or any(len(c) == 0 for c in chunk_ids):
        raise ValueError("encode_chunks: every chunk must contain at least one token")
    ids: list[int] = []
    pos: list[int] = []
    spans: list[tuple[int, int]] = []
    for c in chunk_ids:
        spans.append((len(ids), len(ids) + len(c)))
        ids.extend(c)
        pos.extend(range(len(c)))
    n = len(ids)
    mask = np.zeros((n, n), dtype=bool)
    for a, b in spans:
        mask[a:b, a:b] = True
    x = dk.add(dk.take_rows(P["emb"], ids), dk.take_rows(P["enc_pos"], _positions(cfg, pos)))
    for l in range(cfg.encoder_layers):
        pre = f"enc{l}"
        x = dk.add(x, _self_attention(P, pre, _ln(P, pre + ".ln1", x), cfg.attention_heads, mask))
        x = dk.add(x, _ffn(P, pre, _ln(P, pre + ".ln2", x)))
    return _ln(P, "enc.lnf", x), spans


def encode_chunk(P, cfg: ModelConfig, ids: Sequence[int]) -> Tensor:
    """Hidden states [h_1 .. h_m] of one chunk."""
    if len(ids) == 0:
        raise ValueError("encode_chunk: empty chunk")
    return encode_chunks(P, cfg, [ids])[0]


def chunk_vector(states: Tensor) -> Tensor:
    return dk.mean_pool(states)


def chunk_vectors(states: Tensor, spans: Sequence[tuple[int, int]]) -> Tensor:
    return dk.concat([dk.mean_pool(dk.slice_rows(states, a, b)) for a, b in spans], axis=0)


def decode_hidden(P, cfg: ModelConfig, input_ids: Sequence[int], rel_pos: Sequence[int],
                  memory: Tensor, memory_mask: np.ndarray) -> Tensor:
    """Top-layer decoder states; row t may only attend memory rows allowed by ``memory_mask[t]``."""
    t = len(input_ids)
    causal = np.tril(np.ones((t, t), dtype=bool))
    x = dk.add(dk.take_rows(P["emb"], input_ids), dk.take_rows(P["dec_pos"], _positions(cfg, rel_pos)))
    d = cfg.d_model
    for l in range(cfg.decoder_layers):
        pre = f"dec{l}"
        x = dk.add(x, _self_attention(P, pre, _ln(P, pre + ".ln1", x), cfg.attention_heads, causal))
        q = _lin(P, pre + ".xq", _ln(P, pre + ".ln2", x))
        kv = _lin(P, pre + ".xkv", memory)
        att = dk.attention(q, dk.slice_cols(kv, 0, d), dk.slice_cols(kv, d, 2 * d), cfg.attention_heads,
                           memory_mask)
        x = dk.add(x, _lin(P, pre + ".xo", att))
        x = dk.add(x, _ffn(P, pre, _ln(P, pre + ".ln3", x)))
    return _ln(P, "dec.lnf", x)


def vocab_logits(P, hidden: Tensor) -> Tensor:
    return _lin(P, "out", hidden)


def decode_step(P, cfg: ModelConfig, prefix_ids: Sequence[int], rel_pos: Sequence[int],
                chunk_states: Tensor) -> np.ndarray:
    """Next-token distribution given the prefix (starting with [bos]) and one chunk's states."""
    mask = np.ones((len(prefix_ids), chunk_states.shape[0]), dtype=bool)
    with dk.no_grad():
        h = decode_hidden(P, cfg, prefix_ids, rel_pos, chunk_states, mask)
        logits = vocab_logits(P, dk.slice_rows(h, h.shape[0] - 1, h.shape[0]))
    return dk._softmax(logits.data)[0]


# --- selector and switch predictor -------------------------------------------------


def importance(P, chunk_vecs: Tensor) -> Tensor:
    """FFN1 over chunk vectors: (M, d) -> (M, 1)."""
    return _lin(P, "ffn1.o", dk.tanh(_lin(P, "ffn1.h", chunk_vecs)))


def bce_loss_importance(P, chunk_vecs: Tensor, labels: np.ndarray) -> Tensor:
    return dk.bce_with_logits(importance(P, chunk_vecs), np.asarray(labels, dtype=float).reshape(-1, 1))


def relevance(P, chunk_vecs: Tensor, hy: Tensor) -> Tensor:
    """FFN2 on [chunk || prefix] plus (h_x U)(V^T h_y): (M, d), (N, d) -> (N, M)."""
    m, n = chunk_vecs.shape[0], hy.shape[0]
    hx_part = _lin(P, "ffn2.hx", chunk_vecs)              # (M, d)
    hy_part = dk.matmul(hy, P["ffn2.hy.W"])               # (N, d)
    pairs = dk.add(dk.take_rows(hy_part, np.repeat(np.arange(n), m)),
                   dk.take_rows(hx_part, np.tile(np.arange(m), n)))
    linear = dk.reshape(_lin(P, "ffn2.o", dk.tanh(pairs)), (n, m))
    bilinear = dk.matmul(dk.matmul(hy, P["V"]), dk.transpose(dk.matmul(chunk_vecs, P["U"])))
    return dk.add(linear, bilinear)


def selector_scores(P, chunk_vecs: Tensor, hy: Tensor) -> Tensor:
    """I(x_c) + R(x_c, y_<j) for every prefix row and chunk: (N, M)."""
    imp = dk.reshape(importance(P, chunk_vecs), (1, chunk_vecs.shape[0]))
    return dk.add(relevance(P, chunk_vecs, hy), imp)


def selector_distribution(P, chunk_vecs: Tensor, hy: Tensor) -> Tensor:
    return dk.softmax(selector_scores(P, chunk_vecs, hy))


def switch_logits(P, hy: Tensor, token_emb: Tensor) -> Tensor:
    h = dk.tanh(dk.add(_lin(P, "ffn3.h", hy), dk.matmul(token_emb, P["ffn3.e.W"])))
    return _lin(P, "ffn3.o", h)


def switch_probability(P, hy: Tensor, token_emb: Tensor) -> Tensor:
    return dk.sigmoid(switch_logits(P, hy, token_emb))


def regularizer(p: Tensor) -> Tensor:
    """Mean over segments of summed positive increments of the row-wise CDFs."""
    n = p.shape[0]
    if n < 2:
        return dk.scale(dk.sum_all(dk.slice_rows(p, 0, 0)), 1.0)
    s = dk.cumulative_sum(p)
    inc = dk.sub(dk.slice_rows(s, 1, n), dk.slice_rows(s, 0, n - 1))
    return dk.scale(dk.sum_all(dk.hinge_pos(inc)), 1.0 / n)


def regularizer_value(p: np.ndarray) -> float:
    with dk.no_grad():
        return regularizer(Tensor(p)).item()


def selector_output(p: np.ndarray) -> SelectorOutput:
    return SelectorOutput(p=p, s=np.cumsum(p, axis=1))


def selector_loss(scores: Tensor, gold: Sequence[int], alpha: float) -> tuple[Tensor, Tensor, Tensor]:
    """Cross-entropy against gold chunks (summed over segments) plus alpha times the regularizer.

    Returns (loss, cross_entropy, regularizer).
    """
    m = scores.shape[1]
    if any(not 0 <= g < m for g in gold):
        raise ValueError(f"selector_loss: gold chunk out of range [0, {m})")
    ce = dk.cross_entropy(scores, gold, reduction="sum")
    reg = regularizer(dk.softmax(scores))
    return dk.add(ce, dk.scale(reg, alpha)), ce, reg


# --- teacher-forced episode loss ---------------------------------------------------


@dataclass
class EpisodeForward:
    total: Tensor
    generation: Tensor
    selector_ce: Tensor
    regularizer: Tensor
    switch: Tensor
    selector_probs: np.ndarray
    switch_probs: np.ndarray


def _decoder_layout(ep: EpisodeTensors, spans: Sequence[tuple[int, int]]):
    """Inputs, targets, segment-relative positions and memory mask for teacher forcing."""
    y = ep.summary_ids
    t = len(y)
    seg_of = np.empty(t, dtype=np.int64)
    rel = np.empty(t + 1, dtype=np.int64)
    for j, (a, b) in enumerate(ep.segments):
        seg_of[a:b] = j
        rel[a:b] = np.arange(b - a)
    rel[t] = 0
    chunk_for = [ep.gold_chunks[seg_of[i]] for i in range(t)]
    chunk_for.append(ep.gold_chunks[-1] if ep.gold_chunks else 0)
    total_rows = spans[-1][1]
    mask = np.zeros((t + 1, total_rows), dtype=bool)
    for i, c in enumerate(chunk_for):
        a, b = spans[c]
        mask[i, a:b] = True
    return rel, mask


def episode_forward(P, cfg: ModelConfig, ep: EpisodeTensors, bos: int, sep: int) -> EpisodeForward:
    if not ep.summary_ids:
        raise ValueError("episode_forward: empty summary")
    states, spans = encode_chunks(P, cfg, ep.chunk_ids)
    vecs = chunk_vectors(states, spans)
    rel, mask = _decoder_layout(ep, spans)
    inputs = [bos] + list(ep.summary_ids)
    targets = list(ep.summary_ids) + [sep]
    hidden = decode_hidden(P, cfg, inputs, rel, states, mask)
    gen = dk.cross_entropy(vocab_logits(P, hidden), targets)

    t = len(ep.summary_ids)
    h_tok = dk.slice_rows(hidden, 0, t)
    emb = dk.take_rows(P["emb"], ep.summary_ids)
    sw_logits = switch_logits(P, h_tok, emb)
    sw = dk.bce_with_logits(sw_logits, np.asarray(ep.switch_labels, dtype=float).reshape(t, 1))

    rows = [segment_prefix_state(P, cfg, ep, hidden, states, spans, j, bos) for j in range(len(ep.segments))]
    hy = dk.concat(rows, axis=0)
    scores = selector_scores(P, vecs, hy)
    sel, ce, reg = selector_loss(scores, ep.gold_chunks, cfg.alpha)
    lg, ls, lw = cfg.loss_weights
    total = dk.add(dk.add(dk.scale(gen, lg), dk.scale(sel, ls)), dk.scale(sw, lw))
    return EpisodeForward(total, gen, ce, reg, sw, dk._softmax(scores.data), dk._sigmoid(sw_logits.data)[:, 0])


def segment_prefix_state(P, cfg, ep: EpisodeTensors, hidden: Tensor, states: Tensor,
                         spans, j: int, bos: int) -> Tensor:
    """h_{y<j}: the state that predicted the last token of segment j-1.

    For the first segment it is the [bos] state computed against the first
    chunk, which is where decoding always begins.
    """
    if j > 0:
        end = ep.segments[j - 1][1]
        return dk.slice_rows(hidden, end - 1, end)
    if ep.gold_chunks[0] == 0:
        return dk.slice_rows(hidden, 0, 1)
    a, b = spans[0]
    first = dk.slice_rows(states, a, b)
    return decode_hidden(P, cfg, [bos], [0], first, np.ones((1, b - a), dtype=bool))


# --- optimizer ---------------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay (applied to matrices only)."""

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, names: Optional[Iterable[str]] = None, clip: Optional[float] = None) -> float:
        names = list(self.params) if names is None else list(names)
        grads = {k: self.params[k].grad for k in names if self.params[k].grad is not None}
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        factor = clip / norm if clip and norm > clip else 1.0
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            p = self.params[k]
            g = g * factor
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            if self.wd and p.data.ndim == 2:
                p.data = p.data * (1.0 - self.lr * self.wd)
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return norm

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
