"""Linking pipeline: encode, retrieve, threshold-route, adjudicate.

Four run variants come from crossing two axes: candidate routing
(vanilla = every mention goes to the LLM; threshold = high-confidence
top-1 hits are linked directly) and prompt mode (chain = NIL gate then
selection; single = selection only).
"""

from __future__ import annotations

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from . import kb
from .adjudicator import PromptContext, adjudicate_chain, adjudicate_single
from .corpus import NIL_LABEL, MentionQuery, mark_mention
from .encoders import MarkedText
from .errors import ChatBackendError, ConfigError, PipelineError
from .index import VectorIndex, search

VARIANT_VANILLA = "vanilla"
VARIANT_THRESHOLD = "threshold"
PROMPT_CHAIN = "chain"
PROMPT_SINGLE = "single"

ROUTE_EASY_TOP1 = "easy_top1"
ROUTE_LLM_CHAIN = "llm_chain"
ROUTE_LLM_SINGLE = "llm_single"
ROUTE_BACKEND_FALLBACK = "backend_fallback"
ROUTE_NO_CANDIDATES = "no_candidates"
ROUTES = (
    ROUTE_EASY_TOP1,
    ROUTE_LLM_CHAIN,
    ROUTE_LLM_SINGLE,
    ROUTE_BACKEND_FALLBACK,
    ROUTE_NO_CANDIDATES,
)

POLICY_FALLBACK_TOP1 = "fallback_top1"
POLICY_FAIL_RUN = "fail_run"


@dataclass(frozen=True)
class PipelineConfig:
    """Run parameters.

    threshold is required for the threshold variant and ignored by vanilla;
    +inf is legal (it reduces threshold to vanilla), NaN is not.
    """

    variant: str
    prompt_mode: str
    block_size: int = 10
    threshold: Optional[float] = None
    backend_failure_policy: str = POLICY_FALLBACK_TOP1

    def __post_init__(self):
        if self.variant not in (VARIANT_VANILLA, VARIANT_THRESHOLD):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.prompt_mode not in (PROMPT_CHAIN, PROMPT_SINGLE):
            raise ConfigError(f"unknown prompt mode {self.prompt_mode!r}")
        if not isinstance(self.block_size, int) or isinstance(self.block_size, bool):
            raise ConfigError(f"block size must be an integer, got {self.block_size!r}")
        if self.block_size < 1:
            raise ConfigError(f"block size must be >= 1, got {self.block_size}")
        if self.backend_failure_policy not in (POLICY_FALLBACK_TOP1, POLICY_FAIL_RUN):
            raise ConfigError(
                f"unknown backend failure policy {self.backend_failure_policy!r}"
            )
        if self.variant == VARIANT_THRESHOLD:
            if self.threshold is None:
                raise ConfigError("threshold variant requires a threshold value")
            theta = float(self.threshold)
            if math.isnan(theta):
                raise ConfigError("threshold must not be NaN")
            object.__setattr__(self, "threshold", theta)
        elif self.threshold is not None:
            object.__setattr__(self, "threshold", float(self.threshold))


@dataclass
class LinkDeps:
    """Shared run dependencies; index and store are read-only during a run."""

    encoder: object
    index: VectorIndex
    store: kb.KbStore
    chat_client: Optional[object] = None
    max_tokens: int = 256


@dataclass(frozen=True)
class LinkDecision:
    mention_id: str
    doc_id: str
    linked_qid: Optional[str]  # None means NIL
    route: str
    top_score: Optional[float]
    chosen_score: Optional[float]
    candidates_considered: int
    raw_replies: tuple[str, ...] = ()
    gold_qid: Optional[str] = None

    @property
    def is_nil(self) -> bool:
        return self.linked_qid is None

    @property
    def pred_label(self) -> str:
        return self.linked_qid if self.linked_qid is not None else NIL_LABEL

    @property
    def chat_calls(self) -> int:
        return len(self.raw_replies)


@dataclass(frozen=True)
class RunStats:
    mentions: int
    route_counts: dict
    chat_calls: int
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "mentions": self.mentions,
            "route_counts": dict(self.route_counts),
            "chat_calls": self.chat_calls,
            "wall_time_s": self.wall_time_s,
        }


class _CountingChat:
    """Thread-safe proxy counting every chat call issued to the backend."""

    def __init__(self, client):
        self._client = client
        self._lock = threading.Lock()
        self.calls = 0

    def chat(self, messages, temperature: float = 0.0, max_tokens: int = 256, tag=None) -> str:
        with self._lock:
            self.calls += 1
        return self._client.chat(
            messages, temperature=temperature, max_tokens=max_tokens, tag=tag
        )


def _check_deps(config: PipelineConfig, deps: LinkDeps) -> None:
    encoder_dim = getattr(deps.encoder, "dim", None)
    if encoder_dim is not None and encoder_dim != deps.index.dim:
        raise PipelineError(
            f"encoder dim {encoder_dim} does not match index dim {deps.index.dim}"
        )
    if deps.chat_client is None and config.variant == VARIANT_VANILLA:
        raise PipelineError("vanilla variant requires a chat client")


def link_mention(mention: MentionQuery, config: PipelineConfig, deps: LinkDeps) -> LinkDecision:
    """Encode the marked context, retrieve top-K, and route one mention.

    Zero retrieval hits resolve to NIL without consulting the LLM: the
    prompts require a non-empty candidate list.
    """
    _check_deps(config, deps)
    marked = MarkedText(
        text=mark_mention(mention.text, mention.start, mention.end),
        language=mention.language,
    )
    query = deps.encoder.encode(marked)
    hits = search(deps.index, query, config.block_size)
    common = {
        "mention_id": mention.mention_id,
        "doc_id": mention.doc_id,
        "gold_qid": mention.gold_qid,
    }
    if not hits:
        return LinkDecision(
            linked_qid=None,
            route=ROUTE_NO_CANDIDATES,
            top_score=None,
            chosen_score=None,
            candidates_considered=0,
            **common,
        )
    top = hits[0]
    if config.variant == VARIANT_THRESHOLD and top.score >= config.threshold:
        return LinkDecision(
            linked_qid=top.qid,
            route=ROUTE_EASY_TOP1,
            top_score=top.score,
            chosen_score=top.score,
            candidates_considered=len(hits),
            **common,
        )
    if deps.chat_client is None:
        raise PipelineError(
            f"mention {mention.mention_id!r} needs LLM adjudication "
            "but no chat client is configured"
        )
    candidates = kb.enrich(deps.store, [(h.qid, h.score) for h in hits], mention.language)
    ctx = PromptContext(
        language=mention.language_name,
        document_date=mention.document_date,
        genre=mention.genre,
        annotated_text=marked,
        candidates=tuple(candidates),
    )
    adjudicate = adjudicate_chain if config.prompt_mode == PROMPT_CHAIN else adjudicate_single
    try:
        result = adjudicate(
            ctx, deps.chat_client, max_tokens=deps.max_tokens, tag=mention.mention_id
        )
    except ChatBackendError:
        if config.backend_failure_policy == POLICY_FAIL_RUN:
            raise
        return LinkDecision(
            linked_qid=top.qid,
            route=ROUTE_BACKEND_FALLBACK,
            top_score=top.score,
            chosen_score=top.score,
            candidates_considered=len(hits),
            **common,
        )
    chosen_score = None
    if result.linked_qid is not None:
        chosen_score = next(h.score for h in hits if h.qid == result.linked_qid)
    return LinkDecision(
        linked_qid=result.linked_qid,
        route=ROUTE_LLM_CHAIN if config.prompt_mode == PROMPT_CHAIN else ROUTE_LLM_SINGLE,
        top_score=top.score,
        chosen_score=chosen_score,
        candidates_considered=len(hits),
        raw_replies=result.raw_replies,
        **common,
    )


def link_corpus(
    mentions: Sequence[MentionQuery],
    config: PipelineConfig,
    deps: LinkDeps,
    max_inflight: int = 1,
) -> tuple[list[LinkDecision], RunStats]:
    """Link every mention; output order equals input order.

    max_inflight > 1 overlaps mentions on a thread pool (backend calls are
    the bottleneck; index and store are shared read-only).
    """
    if not isinstance(max_inflight, int) or isinstance(max_inflight, bool) or max_inflight < 1:
        raise ConfigError(f"max_inflight must be an integer >= 1, got {max_inflight!r}")
    seen: dict[str, int] = {}
    for pos, mention in enumerate(mentions):
        if mention.mention_id in seen:
            raise PipelineError(
                f"duplicate mention_id {mention.mention_id!r} "
                f"at positions {seen[mention.mention_id]} and {pos}"
            )
        seen[mention.mention_id] = pos
    counting = _CountingChat(deps.chat_client) if deps.chat_client is not None else None
    run_deps = LinkDeps(
        encoder=deps.encoder,
        index=deps.index,
        store=deps.store,
        chat_client=counting,
        max_tokens=deps.max_tokens,
    )
    started = time.perf_counter()
    if max_inflight == 1 or len(mentions) <= 1:
        decisions = [link_mention(m, config, run_deps) for m in mentions]
    else:
        with ThreadPoolExecutor(max_workers=max_inflight) as pool:
            decisions = list(pool.map(lambda m: link_mention(m, config, run_deps), mentions))
    wall = time.perf_counter() - started
    route_counts = {route: 0 for route in ROUTES}
    for decision in decisions:
        route_counts[decision.route] += 1
    stats = RunStats(
        mentions=len(decisions),
        route_counts=route_counts,
        chat_calls=counting.calls if counting is not None else 0,
        wall_time_s=wall,
    )
    return decisions, stats
