"""Evaluation metrics: micro F1, NIL-class P/R/F1, point-biserial, error tally.

The p-value machinery (regularized incomplete beta via Lentz's continued
fraction) is implemented here rather than delegated, so reports are
self-contained and bit-stable across environments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .calibrate import DevRetrievalRecord, recall_at_k
from .corpus import ERROR_RELATIONS, NIL_LABEL
from .errors import MetricError


@dataclass(frozen=True)
class EvalPair:
    mention_id: str
    gold: str  # qid or "NIL"
    pred: str
    top_score: Optional[float] = None


@dataclass(frozen=True)
class MicroReport:
    accuracy_f1: float
    link_precision: float
    link_recall: float
    link_f1: float

    def to_dict(self) -> dict:
        return {
            "accuracy_f1": self.accuracy_f1,
            "link_only": {
                "precision": self.link_precision,
                "recall": self.link_recall,
                "f1": self.link_f1,
            },
        }


@dataclass(frozen=True)
class NilReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


@dataclass(frozen=True)
class CorrelationReport:
    r_pb: float
    n: int
    t_stat: float
    p_value: float

    def to_dict(self) -> dict:
        return {"r_pb": self.r_pb, "n": self.n, "t_stat": self.t_stat, "p_value": self.p_value}


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when the denominator vanishes."""
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def micro_scores(pairs: Sequence[EvalPair]) -> MicroReport:
    """Mention-level scores.

    accuracy_f1 treats NIL as an ordinary label (with one label per mention,
    micro P = R = F1 = accuracy). link_only treats NIL predictions as
    abstentions: P over non-NIL predictions, R over non-NIL golds.
    """
    if not pairs:
        raise MetricError("micro_scores requires at least one pair")
    correct = sum(1 for p in pairs if p.pred == p.gold)
    accuracy = correct / len(pairs)
    pred_links = [p for p in pairs if p.pred != NIL_LABEL]
    gold_links = [p for p in pairs if p.gold != NIL_LABEL]
    correct_links = sum(1 for p in pred_links if p.pred == p.gold)
    precision = correct_links / len(pred_links) if pred_links else 0.0
    recall = correct_links / len(gold_links) if gold_links else 0.0
    return MicroReport(
        accuracy_f1=accuracy,
        link_precision=precision,
        link_recall=recall,
        link_f1=f1_score(precision, recall),
    )


def nil_scores(pairs: Sequence[EvalPair]) -> NilReport:
    """P/R/F1 with NIL as the positive class; zero denominators score 0."""
    if not pairs:
        raise MetricError("nil_scores requires at least one pair")
    tp = sum(1 for p in pairs if p.gold == NIL_LABEL and p.pred == NIL_LABEL)
    fp = sum(1 for p in pairs if p.gold != NIL_LABEL and p.pred == NIL_LABEL)
    fn = sum(1 for p in pairs if p.gold == NIL_LABEL and p.pred != NIL_LABEL)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return NilReport(
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        tp=tp,
        fp=fp,
        fn=fn,
    )


def point_biserial(scores: Sequence[float], correct: Sequence[int]) -> CorrelationReport:
    """Pearson correlation between scores and a 0/1 correctness indicator.

    t = r * sqrt(n-2) / sqrt(1-r^2); the two-sided p-value comes from the
    Student-t distribution with n-2 degrees of freedom.
    """
    if len(scores) != len(correct):
        raise MetricError("scores and correct must have equal length")
    n = len(scores)
    if n < 3:
        raise MetricError("point-biserial needs at least 3 observations")
    xs = [float(s) for s in scores]
    ys = []
    for value in correct:
        if value not in (0, 1):
            raise MetricError(f"correctness values must be 0 or 1, got {value!r}")
        ys.append(float(value))
    if len({*ys}) < 2:
        raise MetricError("correctness indicator has a single class; correlation undefined")
    mean_x = math.fsum(xs) / n
    mean_y = math.fsum(ys) / n
    dx = [x - mean_x for x in xs]
    dy = [y - mean_y for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    if sxx == 0.0:
        raise MetricError("zero score variance; correlation undefined")
    r = sxy / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if r * r >= 1.0:
        t = math.inf if r > 0 else -math.inf
    else:
        t = r * math.sqrt(n - 2) / math.sqrt(1.0 - r * r)
    return CorrelationReport(r_pb=r, n=n, t_stat=t, p_value=student_t_two_sided_p(t, n - 2))


# --- Student-t tail via the regularized incomplete beta -----------------------

_BETACF_MAX_ITER = 500
_BETACF_EPS = 1e-15
_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Lentz continued fraction for the incomplete beta integral."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise MetricError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), accurate to better than 1e-10 over the t-distribution range."""
    if not (a > 0 and b > 0):
        raise MetricError("incomplete beta requires a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    """P(|T| >= |t|) for T ~ Student-t with df degrees of freedom."""
    if df < 1:
        raise MetricError("degrees of freedom must be >= 1")
    if math.isnan(t):
        raise MetricError("t statistic is NaN")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


# --- error-relation tally ------------------------------------------------------


def tally_error_relations(annotations: Sequence[tuple[str, str, str]]) -> dict:
    """Count (dataset, relation) cells plus totals over all six relations."""
    datasets: dict[str, dict[str, int]] = {}
    totals = {relation: 0 for relation in ERROR_RELATIONS}
    for mention_id, relation, dataset in annotations:
        if relation not in ERROR_RELATIONS:
            raise MetricError(
                f"unknown relation {relation!r} for mention {mention_id!r}; "
                f"expected one of {', '.join(ERROR_RELATIONS)}"
            )
        if dataset not in datasets:
            datasets[dataset] = {r: 0 for r in ERROR_RELATIONS}
        datasets[dataset][relation] += 1
        totals[relation] += 1
    return {"datasets": datasets, "totals": totals, "total": len(annotations)}


def retrieval_recall_report(
    records: Sequence[DevRetrievalRecord], k_steps: Sequence[int]
) -> list[tuple[int, float]]:
    """Recall@K per step; same preconditions as recall_at_k."""
    return [(k, recall_at_k(records, k)) for k in k_steps]


def pairs_from_predictions(rows: Sequence[dict], gold: Optional[dict] = None) -> list[EvalPair]:
    """Join prediction rows with gold labels on mention_id.

    Gold defaults to the gold_qid values copied through the prediction file;
    an explicit gold map overrides them. Missing gold is a hard error.
    """
    pairs = []
    for row in rows:
        mention_id = row["mention_id"]
        if gold is not None:
            label = gold.get(mention_id)
            if label is None:
                raise MetricError(f"no gold label for mention {mention_id!r}")
        else:
            label = row.get("gold_qid")
            if label is None:
                raise MetricError(
                    f"prediction row for {mention_id!r} carries no gold_qid; "
                    "pass a gold file"
                )
        pairs.append(
            EvalPair(
                mention_id=mention_id,
                gold=label,
                pred=row["pred_qid"],
                top_score=row.get("top_score"),
            )
        )
    return pairs


def correlation_from_pairs(pairs: Sequence[EvalPair]) -> tuple[CorrelationReport, int]:
    """Point-biserial over (top_score, pred == gold); returns (report, skipped).

    Pairs without a top score (no retrieval hits) carry no usable signal and
    are skipped; the count is reported so runs stay auditable.
    """
    scores, correct = [], []
    skipped = 0
    for pair in pairs:
        if pair.top_score is None:
            skipped += 1
            continue
        scores.append(pair.top_score)
        correct.append(1 if pair.pred == pair.gold else 0)
    return point_biserial(scores, correct), skipped
