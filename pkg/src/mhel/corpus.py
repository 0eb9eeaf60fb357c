"""Canonical dataset formats: mention corpora, mention marking, byte-stable writers.

All files are UTF-8 JSONL with LF line endings. Mention offsets are byte
offsets into the UTF-8 encoding of the context and must fall on character
boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import CorpusError, FormatError

NIL_LABEL = "NIL"

MARK_OPEN = "[ENT] "   # inserted before the mention span
MARK_CLOSE = " [ENT]"  # inserted after the mention span

ERROR_RELATIONS = ("false", "exact", "close", "related", "broader", "narrower")

_MENTION_STR_FIELDS = (
    "doc_id",
    "mention_id",
    "text",
    "language",
    "language_name",
    "document_date",
    "genre",
)


@dataclass(frozen=True)
class MentionQuery:
    """One mention to link: the span is given, the context surrounds it."""

    doc_id: str
    mention_id: str
    text: str
    start: int  # byte offset into the UTF-8 encoding of text
    end: int
    language: str
    language_name: str
    document_date: str
    genre: str
    gold_qid: Optional[str] = None


@dataclass(frozen=True)
class CorpusFile:
    path: str
    mentions: tuple[MentionQuery, ...]
    manifest: dict = field(default_factory=dict)


def _check_span(raw: bytes, start: int, end: int) -> None:
    if not (isinstance(start, int) and isinstance(end, int)):
        raise CorpusError("offsets must be integers")
    if not 0 <= start < end <= len(raw):
        raise CorpusError(
            f"invalid span [{start}, {end}) for a {len(raw)}-byte text"
        )
    # 0x80..0xBF are UTF-8 continuation bytes; offsets must not split a character
    if raw[start] & 0xC0 == 0x80:
        raise CorpusError(f"start offset {start} is not on a character boundary")
    if end < len(raw) and raw[end] & 0xC0 == 0x80:
        raise CorpusError(f"end offset {end} is not on a character boundary")


def mark_mention(text: str, start: int, end: int) -> str:
    """Insert ``[ENT] `` before the span and `` [ENT]`` after it.

    Offsets are byte offsets; exactly 12 bytes are added and the original
    bytes are otherwise untouched.
    """
    raw = text.encode("utf-8")
    _check_span(raw, start, end)
    marked = raw[:start] + b"[ENT] " + raw[start:end] + b" [ENT]" + raw[end:]
    return marked.decode("utf-8")


def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
    """Yield (1-based line number, parsed object); hard error on bad lines."""
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: malformed JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise FormatError(f"{path}: line {lineno}: expected a JSON object")
            yield lineno, obj


def _parse_mention(path, lineno: int, obj: dict) -> MentionQuery:
    for name in _MENTION_STR_FIELDS:
        value = obj.get(name)
        if not isinstance(value, str) or (name != "text" and value == ""):
            raise CorpusError(f"{path}: line {lineno}: field {name!r} missing or not a string")
    gold = obj.get("gold_qid")
    if gold is not None and (not isinstance(gold, str) or gold == ""):
        raise CorpusError(f"{path}: line {lineno}: gold_qid must be a non-empty string")
    start, end = obj.get("start"), obj.get("end")
    if not isinstance(start, int) or not isinstance(end, int) or isinstance(start, bool) or isinstance(end, bool):
        raise CorpusError(f"{path}: line {lineno}: start/end must be integers")
    try:
        _check_span(obj["text"].encode("utf-8"), start, end)
    except CorpusError as exc:
        raise CorpusError(f"{path}: line {lineno}: {exc}") from exc
    return MentionQuery(
        doc_id=obj["doc_id"],
        mention_id=obj["mention_id"],
        text=obj["text"],
        start=start,
        end=end,
        language=obj["language"],
        language_name=obj["language_name"],
        document_date=obj["document_date"],
        genre=obj["genre"],
        gold_qid=gold,
    )


def _derived_manifest(path, mentions: Sequence[MentionQuery]) -> dict:
    languages = sorted({m.language for m in mentions})
    genres = sorted({m.genre for m in mentions})
    return {
        "dataset": Path(path).stem,
        "language": languages[0] if len(languages) == 1 else languages,
        "genre": genres[0] if len(genres) == 1 else genres,
        "kb_snapshot": None,
    }


def load_corpus(path) -> CorpusFile:
    """Load and validate a mention JSONL file.

    A sidecar ``<path>.manifest.json`` overrides the derived manifest fields
    (dataset name, language, genre, KB snapshot tag).
    """
    mentions: list[MentionQuery] = []
    seen: dict[str, int] = {}
    for lineno, obj in _read_jsonl(path):
        mention = _parse_mention(path, lineno, obj)
        if mention.mention_id in seen:
            raise CorpusError(
                f"{path}: duplicate mention_id {mention.mention_id!r} "
                f"on lines {seen[mention.mention_id]} and {lineno}"
            )
        seen[mention.mention_id] = lineno
        mentions.append(mention)
    manifest = _derived_manifest(path, mentions)
    sidecar = Path(str(path) + ".manifest.json")
    if sidecar.exists():
        try:
            override = json.loads(sidecar.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{sidecar}: malformed JSON: {exc.msg}") from exc
        if not isinstance(override, dict):
            raise FormatError(f"{sidecar}: expected a JSON object")
        manifest.update(override)
    return CorpusFile(path=str(path), mentions=tuple(mentions), manifest=manifest)


def write_corpus(path, mentions: Iterable[MentionQuery]) -> int:
    """Write mentions as mention JSONL; returns bytes written."""
    lines = []
    for m in mentions:
        obj = {
            "doc_id": m.doc_id,
            "mention_id": m.mention_id,
            "text": m.text,
            "start": m.start,
            "end": m.end,
            "language": m.language,
            "language_name": m.language_name,
            "document_date": m.document_date,
            "genre": m.genre,
        }
        if m.gold_qid is not None:
            obj["gold_qid"] = m.gold_qid
        lines.append(dumps_stable(obj))
    return _write_lines(path, lines)


# --- byte-stable JSON emission ------------------------------------------------
# Sorted keys and fixed 6-decimal float formatting make repeated runs diffable.


def _emit(value) -> str:
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise FormatError(f"non-finite float {value!r} is not serializable")
        return f"{value:.6f}"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_emit(v) for v in value) + "]"
    if isinstance(value, dict):
        parts = []
        for key in sorted(value):
            if not isinstance(key, str):
                raise FormatError(f"non-string key {key!r} is not serializable")
            parts.append(f"{json.dumps(key, ensure_ascii=False)}: {_emit(value[key])}")
        return "{" + ", ".join(parts) + "}"
    raise FormatError(f"value of type {type(value).__name__} is not serializable")


def dumps_stable(obj) -> str:
    """Deterministic JSON: sorted keys, floats fixed at 6 decimals."""
    return _emit(obj)


def _write_lines(path, lines: list[str]) -> int:
    data = "".join(line + "\n" for line in lines).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(data)
    return len(data)


def write_predictions(path, decisions) -> int:
    """Write link decisions as prediction JSONL; returns bytes written.

    One object per mention: mention_id, doc_id, pred_qid (qid or "NIL"),
    route, top_score, candidates_considered, and gold_qid when present.
    """
    lines = []
    for d in decisions:
        obj = {
            "mention_id": d.mention_id,
            "doc_id": d.doc_id,
            "pred_qid": d.pred_label,
            "route": d.route,
            "top_score": d.top_score,
            "candidates_considered": d.candidates_considered,
        }
        if d.gold_qid is not None:
            obj["gold_qid"] = d.gold_qid
        lines.append(dumps_stable(obj))
    return _write_lines(path, lines)


_PREDICTION_FIELDS = ("mention_id", "doc_id", "pred_qid", "route", "candidates_considered")


def load_predictions(path) -> list[dict]:
    """Load prediction JSONL rows as dicts, validating the required fields."""
    rows = []
    seen: dict[str, int] = {}
    for lineno, obj in _read_jsonl(path):
        for name in _PREDICTION_FIELDS:
            if name not in obj:
                raise FormatError(f"{path}: line {lineno}: missing field {name!r}")
        if "top_score" not in obj:
            raise FormatError(f"{path}: line {lineno}: missing field 'top_score'")
        mention_id = obj["mention_id"]
        if mention_id in seen:
            raise FormatError(
                f"{path}: duplicate mention_id {mention_id!r} "
                f"on lines {seen[mention_id]} and {lineno}"
            )
        seen[mention_id] = lineno
        rows.append(obj)
    return rows


def write_report(path, report: dict) -> int:
    """Write a machine-readable report as stable JSON; returns bytes written."""
    data = (dumps_stable(report) + "\n").encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(data)
    return len(data)


def load_gold(path) -> dict[str, str]:
    """Map mention_id -> gold label from a gold/corpus JSONL file."""
    gold: dict[str, str] = {}
    for lineno, obj in _read_jsonl(path):
        mention_id = obj.get("mention_id")
        label = obj.get("gold_qid")
        if not isinstance(mention_id, str) or not mention_id:
            raise FormatError(f"{path}: line {lineno}: missing mention_id")
        if not isinstance(label, str) or not label:
            raise FormatError(f"{path}: line {lineno}: missing gold_qid")
        if mention_id in gold:
            raise FormatError(f"{path}: line {lineno}: duplicate mention_id {mention_id!r}")
        gold[mention_id] = label
    return gold


def load_error_annotations(path) -> list[tuple[str, str, str]]:
    """Load (mention_id, relation, dataset) triples; unknown relations are hard errors."""
    rows = []
    for lineno, obj in _read_jsonl(path):
        mention_id = obj.get("mention_id")
        relation = obj.get("relation")
        dataset = obj.get("dataset")
        if not isinstance(mention_id, str) or not mention_id:
            raise FormatError(f"{path}: line {lineno}: missing mention_id")
        if not isinstance(dataset, str) or not dataset:
            raise FormatError(f"{path}: line {lineno}: missing dataset")
        if relation not in ERROR_RELATIONS:
            raise FormatError(
                f"{path}: line {lineno}: unknown relation {relation!r}; "
                f"expected one of {', '.join(ERROR_RELATIONS)}"
            )
        rows.append((mention_id, relation, dataset))
    return rows
