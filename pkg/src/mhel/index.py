"""Exact dense inner-product k-NN over precomputed entity embeddings.

No approximate structures: score values feed the adaptive threshold, so they
must be reproducible. Both search paths accumulate products over ascending
column index with scalar adds in float64, which makes them agree bit-for-bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, VectorFileError

MAGIC = b"MHELVEC1"
_HEADER = struct.Struct("<II")  # count, dim
_HEADER_END = len(MAGIC) + _HEADER.size


@dataclass(frozen=True)
class RetrievalHit:
    qid: str
    score: float
    rank: int  # 1-based


class VectorIndex:
    """Immutable in-memory index; search is safe from concurrent callers."""

    def __init__(self, data: np.ndarray, ids: Sequence[str]):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 2:
            raise VectorFileError("embedding matrix must be 2-dimensional")
        if data.shape[1] < 1:
            raise VectorFileError("dim must be >= 1")
        if len(ids) != data.shape[0]:
            raise VectorFileError(
                f"ids length {len(ids)} does not match row count {data.shape[0]}"
            )
        bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
        if bad.size:
            raise VectorFileError(f"non-finite value in row {int(bad[0])}")
        seen: dict[str, int] = {}
        for row, qid in enumerate(ids):
            if not isinstance(qid, str) or not qid:
                raise VectorFileError(f"row {row}: qid must be a non-empty string")
            if qid in seen:
                raise VectorFileError(
                    f"duplicate qid {qid!r} in rows {seen[qid]} and {row}"
                )
            seen[qid] = row
        self._data = data
        self.ids = tuple(ids)
        self._id_arr = np.array(self.ids, dtype=np.str_) if ids else np.array([], dtype=np.str_)

    @property
    def count(self) -> int:
        return self._data.shape[0]

    @property
    def dim(self) -> int:
        return self._data.shape[1]

    def rows(self) -> np.ndarray:
        """Read-only view of the stored float32 matrix."""
        view = self._data.view()
        view.setflags(write=False)
        return view


def _check_query(index: VectorIndex, query, k: int) -> np.ndarray:
    q = np.asarray(query, dtype=np.float32)
    if q.ndim != 1 or q.shape[0] != index.dim:
        raise DimensionError(
            f"query has {q.shape[0] if q.ndim == 1 else q.shape} values, index dim is {index.dim}"
        )
    if not np.isfinite(q).all():
        raise DimensionError("query contains non-finite values")
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise DimensionError(f"k must be an integer >= 1, got {k!r}")
    return q


def search(index: VectorIndex, query, k: int) -> list[RetrievalHit]:
    """Top-k by exact inner product; ties broken by lexicographic qid ascending."""
    q = _check_query(index, query, k)
    if index.count == 0:
        return []
    data = index._data
    scores = np.zeros(index.count, dtype=np.float64)
    # accumulate over ascending column index so scores are bit-stable
    for j in range(index.dim):
        scores += data[:, j].astype(np.float64) * float(q[j])
    order = np.lexsort((index._id_arr, -scores))
    top = order[: min(k, index.count)]
    return [
        RetrievalHit(qid=index.ids[int(i)], score=float(scores[int(i)]), rank=rank)
        for rank, i in enumerate(top, start=1)
    ]


def brute_force_search(index: VectorIndex, query, k: int) -> list[RetrievalHit]:
    """Naive full-scan reference: per-row scalar dot products, full sort.

    Agrees with :func:`search` bit-for-bit because the per-row accumulation
    order (ascending column index) is identical.
    """
    q32 = _check_query(index, query, k)
    q = [float(v) for v in q32]
    scored: list[tuple[float, str]] = []
    rows = index.rows()
    for i in range(index.count):
        row = rows[i].astype(np.float64).tolist()
        acc = 0.0
        for j in range(index.dim):
            acc += row[j] * q[j]
        scored.append((acc, index.ids[i]))
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [
        RetrievalHit(qid=qid, score=score, rank=rank)
        for rank, (score, qid) in enumerate(scored[: min(k, index.count)], start=1)
    ]


def load_index(vectors_path, ids_path) -> VectorIndex:
    """Load and validate a vector file plus its ids JSONL."""
    with open(vectors_path, "rb") as handle:
        blob = handle.read()
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise VectorFileError(
            f"{vectors_path}: bad magic at offset 0: expected {MAGIC!r}"
        )
    if len(blob) < _HEADER_END:
        raise VectorFileError(
            f"{vectors_path}: truncated header: {len(blob)} bytes, need {_HEADER_END}"
        )
    count, dim = _HEADER.unpack_from(blob, len(MAGIC))
    if dim < 1:
        raise VectorFileError(f"{vectors_path}: dim must be >= 1, header says {dim}")
    expected = _HEADER_END + count * dim * 4
    if len(blob) < expected:
        raise VectorFileError(
            f"{vectors_path}: truncated at offset {len(blob)}: expected {expected} bytes"
        )
    if len(blob) > expected:
        raise VectorFileError(f"{vectors_path}: trailing data at offset {expected}")
    data = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=_HEADER_END)
    data = data.reshape(count, dim).copy()

    ids: list[str] = []
    seen: dict[str, int] = {}
    with open(ids_path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise VectorFileError(
                    f"{ids_path}: line {lineno}: malformed JSON: {exc.msg}"
                ) from exc
            qid = obj.get("qid") if isinstance(obj, dict) else None
            if not isinstance(qid, str) or not qid:
                raise VectorFileError(f"{ids_path}: line {lineno}: missing qid")
            if qid in seen:
                raise VectorFileError(
                    f"{ids_path}: duplicate qid {qid!r} on lines {seen[qid]} and {lineno}"
                )
            seen[qid] = lineno
            ids.append(qid)
    if len(ids) != count:
        raise VectorFileError(
            f"{ids_path}: {len(ids)} ids for header count {count} in {vectors_path}"
        )
    try:
        return VectorIndex(data, ids)
    except VectorFileError as exc:
        raise VectorFileError(f"{vectors_path}: {exc}") from exc


def write_index(vectors_path, ids_path, matrix, ids: Sequence[str]) -> None:
    """Write the binary vector file and its ids JSONL (row i <-> line i)."""
    data = np.ascontiguousarray(matrix, dtype=np.float32)
    if data.ndim != 2:
        raise VectorFileError("embedding matrix must be 2-dimensional")
    VectorIndex(data, ids)  # reuse validation: finite, unique ids, matching count
    with open(vectors_path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(_HEADER.pack(data.shape[0], data.shape[1]))
        handle.write(data.astype("<f4").tobytes(order="C"))
    with open(ids_path, "w", encoding="utf-8") as handle:
        for qid in ids:
            handle.write(json.dumps({"qid": qid}, ensure_ascii=False) + "\n")
