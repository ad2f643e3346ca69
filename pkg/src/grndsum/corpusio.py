"""JSONL artifacts exchanged between pipeline stages."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence


class ArtifactError(ValueError):
    """A malformed or missing pipeline artifact; the message names the file (and line)."""


@dataclass(frozen=True)
class Episode:
    id: str
    transcript: str
    description: str

    def to_json(self) -> dict:
        return {"id": self.id, "transcript": self.transcript, "description": self.description}


@dataclass(frozen=True)
class GroundedRecord:
    id: str
    segments: tuple[dict, ...]  # {"text", "chunk", "sent_range"}

    def to_json(self) -> dict:
        return {"id": self.id, "segments": [dict(s) for s in self.segments]}


def require(path: Path, stage: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{stage}: required input {path} does not exist")
    return path


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{path}: file not found")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ArtifactError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ArtifactError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def write_jsonl(path, rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _field(path, lineno: int, obj: dict, name: str, kind) -> Any:
    if name not in obj:
        raise ArtifactError(f"{path}:{lineno}: missing field '{name}'")
    value = obj[name]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ArtifactError(f"{path}:{lineno}: field '{name}' has the wrong type")
    return value


def read_episodes(path) -> list[Episode]:
    out: list[Episode] = []
    seen: dict[str, int] = {}
    for lineno, obj in iter_jsonl(path):
        eid = _field(path, lineno, obj, "id", str)
        if not eid:
            raise ArtifactError(f"{path}:{lineno}: empty episode id")
        if eid in seen:
            raise ArtifactError(f"{path}:{lineno}: duplicate episode id '{eid}' (first seen on line {seen[eid]})")
        seen[eid] = lineno
        out.append(Episode(eid, _field(path, lineno, obj, "transcript", str),
                           _field(path, lineno, obj, "description", str)))
    return out


def write_episodes(path, episodes: Sequence[Episode]) -> None:
    write_jsonl(path, (e.to_json() for e in episodes))


def read_grounded(path) -> list[GroundedRecord]:
    out = []
    seen = set()
    for lineno, obj in iter_jsonl(path):
        gid = _field(path, lineno, obj, "id", str)
        if gid in seen:
            raise ArtifactError(f"{path}:{lineno}: duplicate episode id '{gid}'")
        seen.add(gid)
        segs = _field(path, lineno, obj, "segments", list)
        for s in segs:
            if not isinstance(s, dict) or not {"text", "chunk", "sent_range"} <= s.keys():
                raise ArtifactError(f"{path}:{lineno}: segment needs text, chunk and sent_range")
            if not isinstance(s["chunk"], int) or isinstance(s["chunk"], bool):
                raise ArtifactError(f"{path}:{lineno}: segment chunk must be an integer")
        out.append(GroundedRecord(gid, tuple(segs)))
    return out


def write_grounded(path, records: Sequence[GroundedRecord]) -> None:
    write_jsonl(path, (r.to_json() for r in records))


def write_json(path, obj: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def write_metrics(path, metrics: dict) -> None:
    write_json(path, metrics)


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{path}: file not found")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}:{exc.lineno}: malformed JSON ({exc.msg})") from None
