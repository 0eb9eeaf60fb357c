"""Persistent entity lookup table used to enrich retrieval candidates.

The store is a single SQLite file with an exact-match primary-key index on
qid. It is written once by :func:`import_kb` and read-only on the linking
path; remote metadata fetch is a separate offline enrichment step.
"""

from __future__ import annotations

import json
import os
import re
import sqlite3
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import httpx

from .errors import KbImportError, MhelError, RemoteKbError

_LANG_CODE = re.compile(r"^[a-z]{2,8}$")  # lowercase BCP-47 primary subtag
_DATE = re.compile(r"^(\d{4})(?:-(\d{2})(?:-(\d{2}))?)?$")  # ISO-8601, reduced precision ok

_SCHEMA = """
CREATE TABLE entity (
    qid TEXT PRIMARY KEY,
    labels TEXT NOT NULL,
    descriptions TEXT NOT NULL,
    earliest_date TEXT,
    entity_type TEXT
) WITHOUT ROWID;
"""


@dataclass(frozen=True)
class EntityRecord:
    """One KB entity: per-language labels/descriptions plus optional metadata."""

    qid: str
    labels: Mapping[str, str]
    descriptions: Mapping[str, str]
    earliest_date: Optional[str] = None
    entity_type: Optional[str] = None


@dataclass(frozen=True)
class EnrichedCandidate:
    """A retrieval candidate joined with KB metadata for prompting."""

    qid: str
    score: float
    label: str
    label_language_used: str
    description: Optional[str] = None
    earliest_date: Optional[str] = None
    entity_type: Optional[str] = None


def _validate_lang_map(value, field: str, where: str) -> dict[str, str]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise KbImportError(f"{where}: {field} must be an object mapping language to string")
    out: dict[str, str] = {}
    for code, text in value.items():
        lowered = str(code).lower()
        if not _LANG_CODE.match(lowered):
            raise KbImportError(f"{where}: invalid language code {code!r} in {field}")
        if not isinstance(text, str):
            raise KbImportError(f"{where}: {field}[{code!r}] must be a string")
        out[lowered] = text
    return out


def _validate_record(obj: dict, where: str) -> EntityRecord:
    qid = obj.get("qid")
    if not isinstance(qid, str) or not qid:
        raise KbImportError(f"{where}: missing or empty qid")
    earliest = obj.get("earliest_date")
    if earliest is not None:
        if not isinstance(earliest, str) or not _valid_date(earliest):
            raise KbImportError(f"{where}: earliest_date {earliest!r} is not an ISO-8601 date")
    entity_type = obj.get("entity_type")
    if entity_type is not None and not isinstance(entity_type, str):
        raise KbImportError(f"{where}: entity_type must be a string")
    return EntityRecord(
        qid=qid,
        labels=_validate_lang_map(obj.get("labels"), "labels", where),
        descriptions=_validate_lang_map(obj.get("descriptions"), "descriptions", where),
        earliest_date=earliest,
        entity_type=entity_type,
    )


def _valid_date(value: str) -> bool:
    match = _DATE.match(value)
    if not match:
        return False
    _, month, day = match.groups()
    if month is not None and not 1 <= int(month) <= 12:
        return False
    if day is not None and not 1 <= int(day) <= 31:
        return False
    return True


class KbStore:
    """Handle over the on-disk store; safe for concurrent readers."""

    def __init__(self, path, read_only: bool = True):
        self.path = str(path)
        if read_only and not os.path.exists(self.path):
            raise MhelError(f"store file not found: {self.path}")
        uri = f"file:{self.path}?mode={'ro' if read_only else 'rwc'}"
        self._conn = sqlite3.connect(uri, uri=True, check_same_thread=False)
        self._lock = threading.Lock()

    @classmethod
    def open(cls, path) -> "KbStore":
        return cls(path, read_only=True)

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> "KbStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def count(self) -> int:
        with self._lock:
            row = self._conn.execute("SELECT COUNT(*) FROM entity").fetchone()
        return int(row[0])

    def get(self, qid: str) -> Optional[EntityRecord]:
        """Return the record for qid, or None; absence is a value, not an error."""
        if not qid:
            return None
        with self._lock:
            row = self._conn.execute(
                "SELECT qid, labels, descriptions, earliest_date, entity_type "
                "FROM entity WHERE qid = ?",
                (qid,),
            ).fetchone()
        if row is None:
            return None
        return EntityRecord(
            qid=row[0],
            labels=json.loads(row[1]),
            descriptions=json.loads(row[2]),
            earliest_date=row[3],
            entity_type=row[4],
        )

    def _put(self, record: EntityRecord) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO entity VALUES (?, ?, ?, ?, ?)",
                (
                    record.qid,
                    json.dumps(dict(record.labels), ensure_ascii=False, sort_keys=True),
                    json.dumps(dict(record.descriptions), ensure_ascii=False, sort_keys=True),
                    record.earliest_date,
                    record.entity_type,
                ),
            )


def import_kb(jsonl_path, store_path) -> tuple[KbStore, int]:
    """Build the store from KB JSONL; returns (read-only handle, record count).

    Duplicate qids, missing/empty qids, and malformed lines are hard errors
    naming the offending line numbers. An existing file at store_path is
    replaced.
    """
    if os.path.exists(store_path):
        os.remove(store_path)
    conn = sqlite3.connect(store_path)
    conn.executescript(_SCHEMA)
    seen: dict[str, int] = {}
    count = 0
    try:
        with open(jsonl_path, "r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise KbImportError(
                        f"{jsonl_path}: line {lineno}: malformed JSON: {exc.msg}"
                    ) from exc
                if not isinstance(obj, dict):
                    raise KbImportError(f"{jsonl_path}: line {lineno}: expected a JSON object")
                record = _validate_record(obj, f"{jsonl_path}: line {lineno}")
                if record.qid in seen:
                    raise KbImportError(
                        f"{jsonl_path}: duplicate qid {record.qid!r} "
                        f"on lines {seen[record.qid]} and {lineno}"
                    )
                seen[record.qid] = lineno
                conn.execute(
                    "INSERT INTO entity VALUES (?, ?, ?, ?, ?)",
                    (
                        record.qid,
                        json.dumps(dict(record.labels), ensure_ascii=False, sort_keys=True),
                        json.dumps(dict(record.descriptions), ensure_ascii=False, sort_keys=True),
                        record.earliest_date,
                        record.entity_type,
                    ),
                )
                count += 1
        conn.commit()
    except Exception:
        conn.close()
        raise
    conn.close()
    return KbStore.open(store_path), count


def write_kb_jsonl(path, records: Iterable[EntityRecord]) -> int:
    """Write records in the KB JSONL interchange format; returns bytes written."""
    chunks = []
    for record in records:
        obj = {
            "qid": record.qid,
            "labels": dict(record.labels),
            "descriptions": dict(record.descriptions),
        }
        if record.earliest_date is not None:
            obj["earliest_date"] = record.earliest_date
        if record.entity_type is not None:
            obj["entity_type"] = record.entity_type
        chunks.append(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
    data = "".join(chunks).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(data)
    return len(data)


def get_entity(store: KbStore, qid: str) -> Optional[EntityRecord]:
    return store.get(qid)


def _pick(mapping: Mapping[str, str], language: str) -> tuple[Optional[str], Optional[str]]:
    """First non-empty value along requested language -> en -> lexicographic-first."""
    for code in (language, "en"):
        value = mapping.get(code)
        if value:
            return value, code
    for code in sorted(mapping):
        if mapping[code]:
            return mapping[code], code
    return None, None


def enrich(
    store: KbStore, candidates: Sequence[tuple[str, float]], language: str
) -> list[EnrichedCandidate]:
    """Join candidates with KB metadata; order and scores are preserved.

    The label fallback chain is requested language, then "en", then the
    lexicographically first language with a label, then the qid itself;
    label_language_used records which step fired ("qid" for the last).
    Entities missing from the store yield label = qid with no metadata.
    """
    out = []
    for qid, score in candidates:
        record = store.get(qid)
        if record is None:
            out.append(
                EnrichedCandidate(qid=qid, score=score, label=qid, label_language_used="qid")
            )
            continue
        label, label_code = _pick(record.labels, language)
        description, _ = _pick(record.descriptions, language)
        out.append(
            EnrichedCandidate(
                qid=qid,
                score=score,
                label=label if label is not None else qid,
                label_language_used=label_code if label_code is not None else "qid",
                description=description,
                earliest_date=record.earliest_date,
                entity_type=record.entity_type,
            )
        )
    return out


def fetch_remote_metadata(
    qids: Sequence[str],
    endpoint: str,
    client: Optional[httpx.Client] = None,
    retry_backoff: float = 0.5,
) -> tuple[list[EntityRecord], list[str]]:
    """Fetch records from a metadata endpoint; returns (records, unresolved qids).

    One retry on transport failure, then hard error; HTTP status >= 400 is a
    hard error carrying the status. Unresolvable qids are reported, never
    silently dropped.
    """
    if not qids:
        raise MhelError("fetch_remote_metadata requires at least one qid")
    own = client is None
    client = client or httpx.Client(timeout=30.0)
    url = endpoint + ("&" if "?" in endpoint else "?") + "ids=" + "|".join(qids)
    try:
        response = None
        for attempt in (0, 1):
            try:
                response = client.get(url)
                break
            except httpx.TransportError as exc:
                if attempt:
                    raise RemoteKbError(f"transport failure after retry: {exc}") from exc
                time.sleep(retry_backoff)
        if response.status_code >= 400:
            raise RemoteKbError(
                f"metadata endpoint returned status {response.status_code}",
                status=response.status_code,
            )
        try:
            payload = response.json()
        except ValueError as exc:
            raise RemoteKbError(f"metadata endpoint returned invalid JSON: {exc}") from exc
    finally:
        if own:
            client.close()
    if not isinstance(payload, dict):
        raise RemoteKbError("metadata endpoint must return an object keyed by qid")
    records, unresolved = [], []
    for qid in qids:
        obj = payload.get(qid)
        if obj is None:
            unresolved.append(qid)
            continue
        if not isinstance(obj, dict):
            raise RemoteKbError(f"metadata for {qid!r} must be an object")
        obj = dict(obj, qid=qid)
        try:
            records.append(_validate_record(obj, f"remote metadata for {qid!r}"))
        except KbImportError as exc:
            raise RemoteKbError(str(exc)) from exc
    return records, unresolved


def merge_metadata(store_path, records: Iterable[EntityRecord]) -> int:
    """Merge fetched records into the store; populated fields replace stored ones."""
    store = KbStore(store_path, read_only=False)
    merged = 0
    try:
        for record in records:
            existing = store.get(record.qid)
            if existing is None:
                store._put(record)
            else:
                store._put(
                    EntityRecord(
                        qid=record.qid,
                        labels=record.labels if record.labels else existing.labels,
                        descriptions=(
                            record.descriptions if record.descriptions else existing.descriptions
                        ),
                        earliest_date=(
                            record.earliest_date
                            if record.earliest_date is not None
                            else existing.earliest_date
                        ),
                        entity_type=(
                            record.entity_type
                            if record.entity_type is not None
                            else existing.entity_type
                        ),
                    )
                )
            merged += 1
        store._conn.commit()
    finally:
        store.close()
    return merged
