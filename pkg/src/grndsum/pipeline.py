"""Pipeline stages. Each reads its inputs from a work directory and writes its outputs there."""
from __future__ import annotations

import logging
from dataclasses import asdict, replace
from pathlib import Path
from statistics import fmean
from typing import Callable, Optional, Sequence

from . import evalkit
from .aligner import align_summary
from .chunker import Chunk, chunk
from .config import RunConfig
from .corpusio import (
    ArtifactError,
    Episode,
    GroundedRecord,
    iter_jsonl,
    read_episodes,
    read_grounded,
    read_json,
    require,
    write_episodes,
    write_grounded,
    write_json,
    write_jsonl,
)
from .datafilter import filter_episode
from .decode import generate, predict_selection
from .model import EpisodeTensors
from .report import render_html
from .synthcorpus import generate_corpus
from .textproc import build_idf, is_punct, parse
from .training import (
    GroundedModel,
    build_vocab,
    episode_tensors,
    pretrain_importance_joint,
    train,
)

log = logging.getLogger(__name__)

EPISODES = "episodes.jsonl"
FILTERED = "filtered.jsonl"
FILTER_REPORT = "filter_report.jsonl"
SYNTH_META = "synth_meta.json"
ALIGNMENTS = "alignments.jsonl"
PRETRAINED = "pretrained.ckpt.json"
MODEL = "model.ckpt.json"
TRAIN_LOG = "train_log.jsonl"
GROUNDED = "grounded.jsonl"
SELECTION = "selection.jsonl"
METRICS = "metrics.json"
REPORT_DIR = "report"

REUSE_NS = (1, 2, 3)
ARCHITECTURE = ("d_model", "encoder_layers", "decoder_layers", "attention_heads", "ffn_dim", "lowrank_r",
                "max_positions")


class Workdir:
    def __init__(self, root):
        self.root = Path(root)

    def __truediv__(self, name: str) -> Path:
        return self.root / name

    def episodes_path(self, stage: str) -> Path:
        """Filtered episodes when the filter stage has run, raw episodes otherwise."""
        if (self / FILTERED).exists():
            return self / FILTERED
        return require(self / EPISODES, stage)


def _prepare(episodes: Sequence[Episode], cfg: RunConfig):
    """Parsed transcript, parsed summary and chunks per episode."""
    out = []
    for ep in episodes:
        transcript = parse(ep.transcript)
        if not transcript.sentences:
            raise ArtifactError(f"episode '{ep.id}': empty transcript")
        out.append((ep, transcript, parse(ep.description), chunk(transcript, cfg.chunking)))
    return out


def stage_synth(wd: Workdir, cfg: RunConfig) -> list[Path]:
    corpus = generate_corpus(cfg.synth)
    write_episodes(wd / EPISODES, [Episode(e.id, e.transcript_text, e.summary_text) for e in corpus])
    write_json(wd / SYNTH_META, {"seed": cfg.synth.seed, "config": cfg.to_json()["synth"],
                                 "planted_chunks": {e.id: e.planted_chunks for e in corpus}})
    return [wd / EPISODES, wd / SYNTH_META]


def stage_filter(wd: Workdir, cfg: RunConfig) -> list[Path]:
    episodes = read_episodes(require(wd / EPISODES, "filter"))
    prepared = _prepare(episodes, cfg)
    idf = build_idf(summary for _, _, summary, _ in prepared)
    kept, reports = [], []
    for ep, transcript, summary, chunks in prepared:
        filtered, report = filter_episode(transcript, summary, chunks, idf, cfg.alignment, cfg.filter)
        reports.append({"id": ep.id, **report.to_json()})
        if report.accepted:
            kept.append(Episode(ep.id, ep.transcript, filtered.raw))
    write_episodes(wd / FILTERED, kept)
    write_jsonl(wd / FILTER_REPORT, reports)
    log.info("filter: kept %d of %d episodes", len(kept), len(episodes))
    return [wd / FILTERED, wd / FILTER_REPORT]


def stage_align(wd: Workdir, cfg: RunConfig) -> list[Path]:
    rows = []
    for ep, transcript, summary, chunks in _prepare(read_episodes(wd.episodes_path("align")), cfg):
        al = align_summary(chunks, transcript, summary, cfg.alignment)
        rows.append({"episode_id": ep.id, "gold_chunks": al.gold_chunks, "fallbacks": al.fallbacks,
                     "switch_labels": al.switch_labels, "importance_labels": al.importance_labels,
                     "scores": al.scores, "segments": [list(s) for s in al.segments]})
    write_jsonl(wd / ALIGNMENTS, rows)
    return [wd / ALIGNMENTS]


def _training_data(wd: Workdir, cfg: RunConfig, stage: str):
    episodes = read_episodes(wd.episodes_path(stage))
    path = require(wd / ALIGNMENTS, stage)
    alignments = {}
    for lineno, row in iter_jsonl(path):
        try:
            alignments[row["episode_id"]] = row
        except KeyError:
            raise ArtifactError(f"{path}:{lineno}: missing field 'episode_id'") from None
    prepared = _prepare(episodes, cfg)
    missing = [ep.id for ep, *_ in prepared if ep.id not in alignments]
    if missing:
        raise ArtifactError(f"{path}: no alignment for episode '{missing[0]}'; re-run align")
    return prepared, alignments


def _tensors(model: GroundedModel, prepared, alignments: dict[str, dict]) -> list[EpisodeTensors]:
    vocab = model.vocab
    out = []
    for ep, transcript, summary, chunks in prepared:
        al = alignments[ep.id]
        if not al["gold_chunks"]:
            continue
        out.append(EpisodeTensors(
            chunk_ids=[vocab.encode([t.text for t in c.tokens(transcript)]) for c in chunks],
            summary_ids=vocab.encode(summary.texts),
            segments=[tuple(s) for s in al["segments"]],
            gold_chunks=list(al["gold_chunks"]),
            switch_labels=[b for row in al["switch_labels"] for b in row],
            importance_labels=list(al["importance_labels"]),
        ))
    if not out:
        raise ArtifactError("no episode has a non-empty aligned summary; nothing to train on")
    return out


def _new_model(prepared, cfg: RunConfig) -> GroundedModel:
    vocab = build_vocab([d for _, t, s, _ in prepared for d in (t, s)])
    return GroundedModel.create(vocab, cfg.model)


def stage_pretrain(wd: Workdir, cfg: RunConfig) -> list[Path]:
    prepared, alignments = _training_data(wd, cfg, "pretrain")
    model = _new_model(prepared, cfg)
    data = _tensors(model, prepared, alignments)
    history = pretrain_importance_joint(model, data, cfg.train.pretrain_steps, lr=cfg.train.pretrain_lr,
                                        seed=cfg.train.seed)
    model.meta = {"stage": "pretrain", "seed": cfg.train.seed, "model_seed": cfg.model.seed,
                  "steps": cfg.train.pretrain_steps, "final_loss": history[-1] if history else None}
    model.save(wd / PRETRAINED)
    return [wd / PRETRAINED]


def stage_train(wd: Workdir, cfg: RunConfig) -> list[Path]:
    prepared, alignments = _training_data(wd, cfg, "train")
    if (wd / PRETRAINED).exists():
        model = GroundedModel.load(wd / PRETRAINED)
        wanted = replace(cfg.model, vocab_size=len(model.vocab))
        for name in ARCHITECTURE:
            if getattr(wanted, name) != getattr(model.cfg, name):
                raise ArtifactError(f"{wd / PRETRAINED}: model.{name} is {getattr(model.cfg, name)} in the "
                                    f"checkpoint but {getattr(wanted, name)} in the run config")
        model.cfg = wanted
    else:
        model = _new_model(prepared, cfg)
    data = _tensors(model, prepared, alignments)
    history = train(model, data, cfg.train.steps, batch_size=cfg.train.batch_size, seed=cfg.train.seed,
                    log_every=cfg.train.log_every)
    if not model.finite():
        raise FloatingPointError("train: parameters became non-finite; lower model.learning_rate")
    model.meta = {"stage": "train", "seed": cfg.train.seed, "model_seed": cfg.model.seed,
                  "steps": cfg.train.steps, "pretrained": (wd / PRETRAINED).exists(),
                  "final_loss": history[-1].as_dict() if history else None}
    model.save(wd / MODEL)
    write_jsonl(wd / TRAIN_LOG, ({"step": i + 1, **h.as_dict()} for i, h in enumerate(history)))
    return [wd / MODEL, wd / TRAIN_LOG]


def stage_generate(wd: Workdir, cfg: RunConfig, episodes_path: Optional[Path] = None) -> list[Path]:
    model = GroundedModel.load(require(wd / MODEL, "generate"))
    episodes = read_episodes(episodes_path or wd.episodes_path("generate"))
    grounded, selection = [], []
    for ep, transcript, summary, chunks in _prepare(episodes, cfg):
        out = generate(model, transcript, chunks, cfg.decode)
        out.check(len(chunks))
        grounded.append(GroundedRecord(ep.id, tuple(
            {"text": s.text, "chunk": s.chunk_index, "sent_range": list(s.sent_range)} for s in out.segments)))
        row = {"id": ep.id, "chunks_encoded": out.chunks_encoded, "switch_events": out.switch_events}
        if summary.sentences:
            al = align_summary(chunks, transcript, summary, cfg.alignment)
            pred = predict_selection(model, episode_tensors(model.vocab, transcript, summary, chunks, al),
                                     cfg.decode.switch_threshold)
            row.update(pred_chunks=pred.chunks, gold_chunks=al.gold_chunks, pred_switch=pred.switch,
                       gold_switch=al.flat_switch_labels)
        selection.append(row)
    write_grounded(wd / GROUNDED, grounded)
    write_jsonl(wd / SELECTION, selection)
    return [wd / GROUNDED, wd / SELECTION]


def _words(tokens) -> list[str]:
    return [t.norm for t in tokens if not is_punct(t.text)]


def _mean(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return fmean(vals) if vals else None


def _selection_dict(stats: evalkit.GroundingStats) -> dict:
    return {k: v for k, v in asdict(stats).items() if k not in ("ngram_reuse", "front_half_fraction")}


def evaluate(records: Sequence[GroundedRecord], prepared, selection: dict[str, dict]) -> dict:
    """Per-episode rows and corpus means for every metric."""
    by_id = {ep.id: (transcript, summary, chunks) for ep, transcript, summary, chunks in prepared}
    rows = []
    sel_pred, sel_gold, sw_pred, sw_gold = [], [], [], []
    for rec in records:
        if rec.id not in by_id:
            raise ArtifactError(f"eval: grounded output for unknown episode '{rec.id}'")
        transcript, summary, chunks = by_id[rec.id]
        seg_words = [_words(parse(s["text"]).tokens) for s in rec.segments]
        cand = [w for ws in seg_words for w in ws]
        ref = _words(summary.tokens)
        chunk_words = {c: _words(chunks[c].tokens(transcript))
                       for c in {s["chunk"] for s in rec.segments}}
        seq = [s["chunk"] for s in rec.segments]
        sel = selection.get(rec.id, {})
        row = {"id": rec.id, "n_segments": len(rec.segments), "chunk_sequence": seq,
               "backward_transitions": evalkit.backward_transitions(seq), "unique_chunks": len(set(seq)),
               "same_chunk_rate": sum(a == b for a, b in zip(seq, seq[1:])) / (len(seq) - 1) if len(seq) > 1 else None,
               "switch_events": sel.get("switch_events"), "chunks_encoded": sel.get("chunks_encoded")}
        for name, score in (("rouge1", evalkit.rouge_n(cand, ref, 1)), ("rouge2", evalkit.rouge_n(cand, ref, 2)),
                            ("rougeL", evalkit.rouge_l(cand, ref))):
            row.update({f"{name}_p": score.precision, f"{name}_r": score.recall, f"{name}_f": score.f1})
        sources = [chunk_words[c] for c in sorted(chunk_words)]
        whole = [_words(transcript.tokens)]
        for n in REUSE_NS:
            row[f"reuse{n}_chunks"] = evalkit.ngram_reuse(cand, sources, n)
            row[f"reuse{n}_transcript"] = evalkit.ngram_reuse(cand, whole, n)
        row["front_half_fraction"] = evalkit.front_half_fraction(
            [(ws, chunk_words[s["chunk"]]) for ws, s in zip(seg_words, rec.segments)])
        if "pred_chunks" in sel:
            stats = evalkit.selection_metrics([sel["pred_chunks"]], [sel["gold_chunks"]],
                                              [sel["pred_switch"]], [sel["gold_switch"]])
            row.update({f"tf_{k}": v for k, v in _selection_dict(stats).items()})
            sel_pred.append(sel["pred_chunks"])
            sel_gold.append(sel["gold_chunks"])
            sw_pred.append(sel["pred_switch"])
            sw_gold.append(sel["gold_switch"])
        rows.append(row)
    numeric = sorted({k for r in rows for k, v in r.items()
                      if isinstance(v, (int, float)) and not isinstance(v, bool)})
    means = {k: _mean(r.get(k) for r in rows) for k in numeric}
    corpus = {}
    if sel_pred:
        pooled = evalkit.selection_metrics(sel_pred, sel_gold, sw_pred, sw_gold)
        corpus = _selection_dict(pooled)
    return {"n_episodes": len(rows), "means": means, "selection": corpus, "episodes": rows}


def stage_eval(wd: Workdir, cfg: RunConfig, episodes_path: Optional[Path] = None) -> list[Path]:
    records = read_grounded(require(wd / GROUNDED, "eval"))
    prepared = _prepare(read_episodes(episodes_path or wd.episodes_path("eval")), cfg)
    selection = {row["id"]: row for _, row in iter_jsonl(require(wd / SELECTION, "eval"))}
    metrics = evaluate(records, prepared, selection)
    meta = read_json(wd / MODEL).get("meta", {}) if (wd / MODEL).exists() else {}
    metrics["seeds"] = {"train": meta.get("seed"), "model": meta.get("model_seed"), "synth": cfg.synth.seed}
    metrics["config"] = cfg.to_json()
    write_json(wd / METRICS, metrics)
    return [wd / METRICS]


def stage_render(wd: Workdir, cfg: RunConfig, episodes_path: Optional[Path] = None) -> list[Path]:
    records = read_grounded(require(wd / GROUNDED, "render-html"))
    prepared = _prepare(read_episodes(episodes_path or wd.episodes_path("render-html")), cfg)
    transcripts = {ep.id: t for ep, t, _, _ in prepared}
    chunks: dict[str, list[Chunk]] = {ep.id: c for ep, _, _, c in prepared}
    return render_html(records, transcripts, chunks, wd / REPORT_DIR)


STAGES: dict[str, Callable[..., list[Path]]] = {
    "synth": stage_synth,
    "filter": stage_filter,
    "align": stage_align,
    "pretrain": stage_pretrain,
    "train": stage_train,
    "generate": stage_generate,
    "eval": stage_eval,
    "render-html": stage_render,
}


def run_pipeline(cmd: str, cfg: RunConfig, workdir, episodes_path: Optional[Path] = None) -> list[Path]:
    if cmd not in STAGES:
        raise ValueError(f"unknown stage '{cmd}'; expected one of {', '.join(STAGES)}")
    wd = Workdir(workdir)
    if cmd in ("generate", "eval", "render-html"):
        return STAGES[cmd](wd, cfg, episodes_path)
    return STAGES[cmd](wd, cfg)
