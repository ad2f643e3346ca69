"""Static HTML grounding report: summary segments link to highlighted transcript chunks."""
from __future__ import annotations

import html
from pathlib import Path
from typing import Sequence

from .chunker import Chunk
from .corpusio import GroundedRecord
from .textproc import Document

_PALETTE = ("#fde68a", "#bfdbfe", "#bbf7d0", "#fecaca", "#ddd6fe", "#fed7aa")

_STYLE = """body{font-family:sans-serif;max-width:52em;margin:2em auto;line-height:1.5}
.summary a{color:inherit;text-decoration:none;border-bottom:2px solid #999}
.transcript{margin-top:2em}
.sent{padding:0 .1em}
.empty-summary{color:#a00;font-style:italic}
"""


def chunk_anchor(episode_id: str, chunk_index: int) -> str:
    return f"{_slug(episode_id)}-chunk-{chunk_index}"


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in text)


def render_episode_html(record: GroundedRecord, transcript: Document, chunks: Sequence[Chunk]) -> str:
    """One self-contained page.

    Each chunk a segment points at gets an empty anchor element placed just
    before its first sentence. Sentences carry ``chunk-{c}`` and ``seg-{k}``
    classes, and a sibling ``:target`` rule highlights the chunk when its
    anchor is followed.
    """
    targets: dict[int, list[int]] = {}
    for k, seg in enumerate(record.segments):
        c = seg["chunk"]
        if not 0 <= c < len(chunks):
            raise ValueError(f"episode {record.id}: segment {k} references missing chunk {c} "
                             f"({len(chunks)} chunks)")
        targets.setdefault(c, []).append(k)

    sent_chunks: dict[int, list[int]] = {}
    for c in targets:
        a, b = chunks[c].sentence_range
        for i in range(a, b):
            sent_chunks.setdefault(i, []).append(c)

    esc = html.escape
    out = ["<!DOCTYPE html>", '<html lang="en"><head><meta charset="utf-8">',
           f"<title>{esc(record.id)}</title>", "<style>", _STYLE]
    for c in sorted(targets):
        colour = _PALETTE[c % len(_PALETTE)]
        out.append(f"#{chunk_anchor(record.id, c)}:target ~ .chunk-{c}{{background:{colour}}}")
    for k, seg in enumerate(record.segments):
        colour = _PALETTE[seg["chunk"] % len(_PALETTE)]
        out.append(f".summary:has(.seg-link-{k}:hover) ~ .transcript .seg-{k}{{outline:2px solid {colour}}}")
    out += ["</style></head><body>", f"<h1>{esc(record.id)}</h1>", '<div class="summary">']
    if not record.segments:
        out.append('<p class="empty-summary">empty summary: the decoder produced no segments</p>')
    for k, seg in enumerate(record.segments):
        c = seg["chunk"]
        out.append(f'<a class="seg-link seg-link-{k}" id="{_slug(record.id)}-seg-{k}" '
                   f'href="#{chunk_anchor(record.id, c)}" data-chunk="{c}">{esc(seg["text"])}</a>')
    out += ["</div>", '<div class="transcript">']
    starts = {chunks[c].sentence_range[0]: [] for c in targets}
    for c in sorted(targets):
        starts[chunks[c].sentence_range[0]].append(c)
    for i in range(len(transcript.sentences)):
        for c in starts.get(i, []):
            out.append(f'<span class="chunk-anchor" id="{chunk_anchor(record.id, c)}" data-chunk="{c}"></span>')
        classes = ["sent"]
        for c in sent_chunks.get(i, []):
            classes.append(f"chunk-{c}")
            classes += [f"seg-{k}" for k in targets[c]]
        out.append(f'<span class="{" ".join(classes)}" data-sent="{i}">{esc(transcript.sentence_text(i))}</span>')
    out += ["</div>", "</body></html>", ""]
    return "\n".join(out)


def render_html(records: Sequence[GroundedRecord], transcripts: dict[str, Document],
                chunks: dict[str, Sequence[Chunk]], out_dir) -> list[Path]:
    """Write one page per episode plus an index; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    links = []
    for rec in records:
        if rec.id not in transcripts:
            raise ValueError(f"render_html: no transcript for episode '{rec.id}'")
        page = out_dir / f"{_slug(rec.id)}.html"
        page.write_text(render_episode_html(rec, transcripts[rec.id], chunks[rec.id]), encoding="utf-8")
        paths.append(page)
        links.append(f'<li><a href="{page.name}">{html.escape(rec.id)}</a> ({len(rec.segments)} segments)</li>')
    index = out_dir / "index.html"
    index.write_text("\n".join(['<!DOCTYPE html>', '<html lang="en"><head><meta charset="utf-8">',
                                "<title>Grounded summaries</title></head><body>", "<ul>", *links,
                                "</ul></body></html>", ""]), encoding="utf-8")
    return [index] + paths
