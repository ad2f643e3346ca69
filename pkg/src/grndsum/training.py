"""Training loop, importance pretraining and checkpoint I/O."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import diffkernel as dk
from .aligner import GroundingAlignment
from .chunker import Chunk
from .diffkernel import Tensor
from .model import (
    CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
    AdamW,
    EpisodeTensors,
    LossReport,
    ModelConfig,
    Vocab,
    bce_loss_importance,
    chunk_vectors,
    encode_chunks,
    episode_forward,
    importance,
    init_params,
)
from .textproc import Document

log = logging.getLogger(__name__)

SELECTOR_FFN1 = ("ffn1.h.W", "ffn1.h.b", "ffn1.o.W", "ffn1.o.b")


@dataclass
class GroundedModel:
    """Config, vocabulary and parameters; the unit that is checkpointed."""

    cfg: ModelConfig
    vocab: Vocab
    params: dict[str, Tensor]
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, vocab: Vocab, cfg: Optional[ModelConfig] = None) -> "GroundedModel":
        cfg = replace(cfg or ModelConfig(), vocab_size=len(vocab))
        return cls(cfg, vocab, init_params(cfg))

    def save(self, path) -> None:
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "vocab": self.vocab.itos,
            "meta": self.meta,
            "params": {k: {"shape": list(p.shape), "data": p.data.ravel().tolist()}
                       for k, p in sorted(self.params.items())},
        }
        Path(path).write_text(json.dumps(doc), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GroundedModel":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
        cfg_d = doc["config"]
        cfg_d["loss_weights"] = tuple(cfg_d["loss_weights"])
        cfg = ModelConfig(**cfg_d)
        params = {k: Tensor(np.asarray(v["data"], dtype=float).reshape(v["shape"]), requires_grad=True, name=k)
                  for k, v in doc["params"].items()}
        return cls(cfg, Vocab(doc["vocab"]), params, doc.get("meta", {}))

    def finite(self) -> bool:
        return dk.parameters_finite(self.params.values())


def build_vocab(docs: Sequence[Document]) -> Vocab:
    return Vocab.build(d.texts for d in docs)


def episode_tensors(vocab: Vocab, transcript: Document, summary: Document, chunks: Sequence[Chunk],
                    alignment: GroundingAlignment) -> EpisodeTensors:
    return EpisodeTensors(
        chunk_ids=[vocab.encode([t.text for t in c.tokens(transcript)]) for c in chunks],
        summary_ids=vocab.encode(summary.texts),
        segments=list(alignment.segments),
        gold_chunks=list(alignment.gold_chunks),
        switch_labels=alignment.flat_switch_labels,
        importance_labels=list(alignment.importance_labels),
    )


def batch_loss(model: GroundedModel, batch: Sequence[EpisodeTensors]):
    """Mean of per-episode losses over the batch, plus the averaged report."""
    parts = [episode_forward(model.params, model.cfg, ep, model.vocab.bos, model.vocab.sep) for ep in batch]
    n = len(parts)
    total = dk.scale(parts[0].total if n == 1 else _sum([p.total for p in parts]), 1.0 / n)
    report = LossReport(
        total=total.item(),
        generation=sum(p.generation.item() for p in parts) / n,
        selector_ce=sum(p.selector_ce.item() for p in parts) / n,
        regularizer=sum(p.regularizer.item() for p in parts) / n,
        switch=sum(p.switch.item() for p in parts) / n,
    )
    return total, report


def _sum(ts):
    out = ts[0]
    for t in ts[1:]:
        out = dk.add(out, t)
    return out


def training_step(model: GroundedModel, batch: Sequence[EpisodeTensors], opt: AdamW) -> LossReport:
    opt.zero_grad()
    with dk.new_tape():
        total, report = batch_loss(model, batch)
        dk.backward(total)
    opt.step(clip=model.cfg.grad_clip)
    return report


def make_optimizer(model: GroundedModel) -> AdamW:
    return AdamW(model.params, lr=model.cfg.learning_rate, betas=(0.9, 0.999), weight_decay=model.cfg.weight_decay)


def train(model: GroundedModel, data: Sequence[EpisodeTensors], steps: int, batch_size: int = 1,
          seed: int = 0, log_every: int = 0, opt: Optional[AdamW] = None) -> list[LossReport]:
    """Joint training over shuffled epochs; deterministic for a fixed seed."""
    if not data:
        raise ValueError("train: no training episodes")
    rng = np.random.default_rng(seed)
    opt = opt or make_optimizer(model)
    history: list[LossReport] = []
    order: list[int] = []
    for step in range(steps):
        batch = []
        while len(batch) < batch_size:
            if not order:
                order = list(rng.permutation(len(data)))
            batch.append(data[order.pop()])
        report = training_step(model, batch, opt)
        history.append(report)
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d total=%.4f gen=%.4f sel=%.4f reg=%.4f switch=%.4f", step + 1, report.total,
                     report.generation, report.selector_ce, report.regularizer, report.switch)
    return history


def pretrain_importance(model: GroundedModel, chunk_vecs: np.ndarray, labels: Sequence[bool], steps: int = 500,
                        lr: float = 1e-2) -> list[float]:
    """Fit FFN1 as a binary classifier on fixed chunk vectors. Returns the loss history."""
    y = np.asarray(labels, dtype=float)
    if y.size and (y.min() == y.max()):
        warnings.warn("pretrain_importance: all importance labels belong to one class", stacklevel=2)
    x = Tensor(np.asarray(chunk_vecs, dtype=float))
    opt = AdamW(model.params, lr=lr, weight_decay=0.0)
    history = []
    for _ in range(steps):
        opt.zero_grad()
        with dk.new_tape():
            loss = bce_loss_importance(model.params, x, y)
            dk.backward(loss)
        opt.step(names=SELECTOR_FFN1)
        history.append(loss.item())
    return history


def corpus_chunk_vectors(model: GroundedModel, data: Sequence[EpisodeTensors]) -> tuple[np.ndarray, np.ndarray]:
    """Chunk vectors from the (frozen) encoder and their importance labels, stacked over episodes."""
    vecs, labels = [], []
    with dk.no_grad():
        for ep in data:
            states, spans = encode_chunks(model.params, model.cfg, ep.chunk_ids)
            vecs.append(chunk_vectors(states, spans).data)
            labels.extend(ep.importance_labels)
    return np.concatenate(vecs, axis=0), np.asarray(labels, dtype=bool)


def pretrain_importance_joint(model: GroundedModel, data: Sequence[EpisodeTensors], steps: int,
                              lr: float = 1e-3, seed: int = 0) -> list[float]:
    """Importance pretraining with gradients flowing into the chunk encoder too."""
    labels = [l for ep in data for l in ep.importance_labels]
    if labels and len(set(labels)) == 1:
        warnings.warn("pretrain_importance: all importance labels belong to one class", stacklevel=2)
    rng = np.random.default_rng(seed)
    opt = AdamW(model.params, lr=lr, weight_decay=0.0)
    names = [k for k in model.params if k.startswith(("emb", "enc")) or k in SELECTOR_FFN1]
    history = []
    for _ in range(steps):
        ep = data[int(rng.integers(len(data)))]
        opt.zero_grad()
        with dk.new_tape():
            states, spans = encode_chunks(model.params, model.cfg, ep.chunk_ids)
            loss = bce_loss_importance(model.params, chunk_vectors(states, spans), np.asarray(ep.importance_labels, float))
            dk.backward(loss)
        opt.step(names=names, clip=model.cfg.grad_clip)
        history.append(loss.item())
    return history


def importance_scores(model: GroundedModel, chunk_vecs: np.ndarray) -> np.ndarray:
    with dk.no_grad():
        return importance(model.params, Tensor(chunk_vecs)).data[:, 0]
