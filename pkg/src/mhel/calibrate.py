"""Hyperparameter calibration on a development set.

Two procedures: the routing threshold is the median rank-1 score of records
the retriever already gets right, and the block size is the first Recall@K
step whose successor adds less than epsilon.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Sequence

from .corpus import NIL_LABEL
from .errors import CalibrationError
from .index import RetrievalHit

DEFAULT_K_STEPS = (10, 20, 30, 40, 50)
DEFAULT_EPSILON = 0.01


@dataclass(frozen=True)
class DevRetrievalRecord:
    """One dev mention with its ranked hits (descending score)."""

    mention_id: str
    gold_qid: str  # "NIL" permitted
    ranked_hits: tuple[RetrievalHit, ...]

    def __post_init__(self):
        scores = [h.score for h in self.ranked_hits]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise CalibrationError(
                f"record {self.mention_id!r}: hits are not sorted by descending score"
            )


@dataclass(frozen=True)
class CalibrationConfig:
    k_steps: tuple[int, ...] = DEFAULT_K_STEPS
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        steps = tuple(self.k_steps)
        if any(not isinstance(k, int) or k < 1 for k in steps):
            raise CalibrationError("k_steps must be integers >= 1")
        if any(a >= b for a, b in zip(steps, steps[1:])):
            raise CalibrationError("k_steps must be strictly increasing")
        if not self.epsilon > 0:
            raise CalibrationError("epsilon must be > 0")
        object.__setattr__(self, "k_steps", steps)


def calibrate_threshold(records: Sequence[DevRetrievalRecord]) -> float:
    """Median rank-1 score over records whose rank-1 qid equals their gold.

    Even-count median is the arithmetic mean of the two middle values. With no
    correct rank-1 predictions the threshold is undefined: hard error.
    """
    correct = [
        r.ranked_hits[0].score
        for r in records
        if r.ranked_hits and r.ranked_hits[0].qid == r.gold_qid
    ]
    if not correct:
        raise CalibrationError("no correct rank-1 predictions; threshold undefined")
    return float(statistics.median(correct))


def recall_at_k(records: Sequence[DevRetrievalRecord], k: int) -> float:
    """Fraction of non-NIL-gold records with gold among the first min(k, |hits|) hits."""
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise CalibrationError(f"k must be an integer >= 1, got {k!r}")
    linkable = [r for r in records if r.gold_qid != NIL_LABEL]
    if not linkable:
        raise CalibrationError("every gold label is NIL; recall undefined")
    found = sum(1 for r in linkable if any(h.qid == r.gold_qid for h in r.ranked_hits[:k]))
    return found / len(linkable)


def select_block_size(
    records: Sequence[DevRetrievalRecord], config: CalibrationConfig = CalibrationConfig()
) -> int:
    """Smallest step k_i with R(k_{i+1}) - R(k_i) < epsilon; last step if none."""
    steps = config.k_steps
    if len(steps) < 2:
        raise CalibrationError("block-size selection needs at least two k steps")
    curve = [recall_at_k(records, k) for k in steps]
    for i in range(len(steps) - 1):
        if curve[i + 1] - curve[i] < config.epsilon:
            return steps[i]
    return steps[-1]


def recall_curve(
    records: Sequence[DevRetrievalRecord], k_steps: Sequence[int] = DEFAULT_K_STEPS
) -> list[tuple[int, float]]:
    """(k, recall) per step; delegates to recall_at_k."""
    return [(k, recall_at_k(records, k)) for k in k_steps]


def load_dev_retrievals(path) -> list[DevRetrievalRecord]:
    """Read the dev-retrieval dump: mention_id, gold_qid, hits (descending)."""
    from .corpus import _read_jsonl
    from .errors import FormatError

    records = []
    seen: dict[str, int] = {}
    for lineno, obj in _read_jsonl(path):
        mention_id = obj.get("mention_id")
        gold_qid = obj.get("gold_qid")
        hits = obj.get("hits")
        if not isinstance(mention_id, str) or not mention_id:
            raise FormatError(f"{path}: line {lineno}: missing mention_id")
        if not isinstance(gold_qid, str) or not gold_qid:
            raise FormatError(f"{path}: line {lineno}: missing gold_qid")
        if not isinstance(hits, list):
            raise FormatError(f"{path}: line {lineno}: 'hits' must be a list")
        if mention_id in seen:
            raise FormatError(
                f"{path}: duplicate mention_id {mention_id!r} "
                f"on lines {seen[mention_id]} and {lineno}"
            )
        seen[mention_id] = lineno
        ranked = []
        for rank, hit in enumerate(hits, start=1):
            if (
                not isinstance(hit, dict)
                or not isinstance(hit.get("qid"), str)
                or not isinstance(hit.get("score"), (int, float))
                or isinstance(hit.get("score"), bool)
            ):
                raise FormatError(
                    f"{path}: line {lineno}: hit {rank} must be "
                    '{"qid": str, "score": number}'
                )
            ranked.append(RetrievalHit(qid=hit["qid"], score=float(hit["score"]), rank=rank))
        try:
            records.append(
                DevRetrievalRecord(
                    mention_id=mention_id, gold_qid=gold_qid, ranked_hits=tuple(ranked)
                )
            )
        except CalibrationError as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return records


def write_dev_retrievals(path, records: Sequence[DevRetrievalRecord]) -> int:
    """Write records in the dump format read back by load_dev_retrievals; returns bytes written."""
    from .corpus import _write_lines, dumps_stable

    lines = []
    for record in records:
        lines.append(
            dumps_stable(
                {
                    "mention_id": record.mention_id,
                    "gold_qid": record.gold_qid,
                    "hits": [
                        {"qid": h.qid, "score": h.score} for h in record.ranked_hits
                    ],
                }
            )
        )
    return _write_lines(path, lines)
