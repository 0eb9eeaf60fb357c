"""LLM adjudication: prompt rendering, reply parsing, chain/single state machines.

Two prompts drive disambiguation. The binary prompt asks whether the marked
mention matches any candidate at all; the selection prompt asks for the best
candidate as a small JSON object. In chain mode a "no" on the first gates the
second; single mode goes straight to selection.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import httpx

from .encoders import MarkedText
from .errors import ChatBackendError, PromptError
from .kb import EnrichedCandidate

ROUTE_CHAIN_NIL_NO = "chain_nil_no"
ROUTE_CHAIN_SELECTED = "chain_selected"
ROUTE_CHAIN_EMPTY = "chain_empty"
ROUTE_SINGLE_SELECTED = "single_selected"
ROUTE_SINGLE_EMPTY = "single_empty"
ROUTE_BACKEND_FALLBACK = "backend_fallback"

NIL_SYSTEM_PROMPT = (
    "You are a highly precise multilingual information extraction system "
    "specialized in disambiguating entities within noisy historical texts. "
    "Your task is to analyse the text provided by the user and determine if "
    "the reference marked by [ENT] tags can be associated or not to one of "
    "the candidate Wikidata entities provided in the JSON list. Always "
    'respond by saying either "yes" or "no". Do not generate Python code.'
)

NIL_USER_TEMPLATE = (
    "Read the input text written in {language}, published in {document_date} "
    "and belonging to the genre of {genre}.\n"
    "\n"
    "Answer if the entity mentioned between the [ENT] tags in the input text "
    "corresponds to one of the candidate Wikidata entity provided in the json. "
    "Give a simple binary answer.\n"
    "\n"
    "Input Text: {annotated_text}\n"
    "\n"
    "Candidates: {candidates_in_json}"
)

SELECTION_SYSTEM_PROMPT = (
    "You are an effective multilingual information extraction system "
    "specialized in disambiguating entities within noisy historical texts.\n"
    "Your task is to analyse the text provided by the user and disambiguate "
    "the reference marked by [ENT] tags by selecting a Wikidata entity from a "
    "given list of candidates. Always respond by returning a JSON-formatted "
    "answer; do not generate Python code."
)

SELECTION_SCHEMA = '{"wikipedia_title": "", "wikidata_id": ""}'

SELECTION_USER_TEMPLATE = (
    "Read the input text written in {language}, published in {document_date} "
    "and belonging to the genre of {genre}.\n"
    "\n"
    "Disambiguate the entity mentioned between the [ENT] tags by selecting "
    "the most appropriate Wikidata entity from the list of candidates.\n"
    "\n"
    "Return the corresponding Wikipedia title and Wikidata ID of the selected "
    "entity in a JSON object formatted as follows:\n"
    + SELECTION_SCHEMA
    + "\n"
    "\n"
    "Make sure to select both the Wikipedia title and the Wikidata ID from "
    "the provided list of candidates. Pay attention that the list of "
    "candidates may not include the entity mentioned. If none of the "
    "candidates match with high confidence the entity tagged with [ENT], "
    "return an empty json.\n"
    "\n"
    "Input Text: {annotated_text}\n"
    "\n"
    "Candidates: {candidates_in_json}"
)

_PLACEHOLDER = re.compile(
    r"\{(language|document_date|genre|annotated_text|candidates_in_json)\}"
)


@dataclass(frozen=True)
class PromptContext:
    """Everything a prompt needs; language is the human-readable name."""

    language: str
    document_date: str
    genre: str
    annotated_text: MarkedText
    candidates: tuple[EnrichedCandidate, ...]


@dataclass(frozen=True)
class AdjudicationResult:
    linked_qid: Optional[str]  # None means NIL
    route: str
    raw_replies: tuple[str, ...]

    @property
    def is_nil(self) -> bool:
        return self.linked_qid is None

    @property
    def calls(self) -> int:
        return len(self.raw_replies)


def candidates_json(candidates: Sequence[EnrichedCandidate]) -> str:
    """Serialize candidates for the prompts; absent metadata keys are omitted."""
    objects = []
    for c in candidates:
        obj = {"wikipedia_title": c.label, "wikidata_id": c.qid}
        if c.description is not None:
            obj["description"] = c.description
        if c.entity_type is not None:
            obj["entity_type"] = c.entity_type
        if c.earliest_date is not None:
            obj["earliest_date"] = c.earliest_date
        objects.append(obj)
    return json.dumps(objects, ensure_ascii=False)


def _render(system: str, user_template: str, ctx: PromptContext) -> list[dict]:
    if not ctx.candidates:
        raise PromptError("prompt rendering requires a non-empty candidate list")
    values = {
        "language": ctx.language,
        "document_date": ctx.document_date,
        "genre": ctx.genre,
        "annotated_text": ctx.annotated_text.text,
        "candidates_in_json": candidates_json(ctx.candidates),
    }
    # single-pass substitution: placeholder-like text inside values stays literal
    user = _PLACEHOLDER.sub(lambda m: values[m.group(1)], user_template)
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": user},
    ]


def render_nil_prompt(ctx: PromptContext) -> list[dict]:
    return _render(NIL_SYSTEM_PROMPT, NIL_USER_TEMPLATE, ctx)


def render_selection_prompt(ctx: PromptContext) -> list[dict]:
    return _render(SELECTION_SYSTEM_PROMPT, SELECTION_USER_TEMPLATE, ctx)


_LETTER_RUN = re.compile(r"[^\W\d_]+", re.UNICODE)


def parse_binary_answer(reply: str) -> str:
    """Total yes/no extraction: first "yes"/"no" token wins, default "no"."""
    for token in _LETTER_RUN.findall(str(reply).lower()):
        if token in ("yes", "no"):
            return token
    return "no"


def _first_balanced_object(text: str) -> Optional[str]:
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


def extract_selection(reply: str, allowed_qids) -> Optional[str]:
    """Total selection extraction with membership validation.

    Takes the first balanced ``{...}`` substring, parses it as JSON, and
    returns its wikidata_id only when that is a non-empty string contained in
    allowed_qids; every other case (no JSON, parse failure, empty object,
    unknown qid) is absent. Titles are not checked: they are enrichment
    labels and may differ textually across languages.
    """
    candidate = _first_balanced_object(str(reply))
    if candidate is None:
        return None
    try:
        obj = json.loads(candidate)
    except (json.JSONDecodeError, RecursionError):
        return None
    if not isinstance(obj, dict):
        return None
    qid = obj.get("wikidata_id")
    if isinstance(qid, str) and qid and qid in set(allowed_qids):
        return qid
    return None


def adjudicate_chain(
    ctx: PromptContext, chat_client, max_tokens: int = 256, tag: Optional[str] = None
) -> AdjudicationResult:
    """NIL prompt first; "no" stops with NIL, "yes" proceeds to selection."""
    first = chat_client.chat(
        render_nil_prompt(ctx), temperature=0.0, max_tokens=max_tokens, tag=tag
    )
    if parse_binary_answer(first) == "no":
        return AdjudicationResult(None, ROUTE_CHAIN_NIL_NO, (first,))
    second = chat_client.chat(
        render_selection_prompt(ctx), temperature=0.0, max_tokens=max_tokens, tag=tag
    )
    qid = extract_selection(second, {c.qid for c in ctx.candidates})
    if qid is not None:
        return AdjudicationResult(qid, ROUTE_CHAIN_SELECTED, (first, second))
    return AdjudicationResult(None, ROUTE_CHAIN_EMPTY, (first, second))


def adjudicate_single(
    ctx: PromptContext, chat_client, max_tokens: int = 256, tag: Optional[str] = None
) -> AdjudicationResult:
    """Selection prompt only; an empty or out-of-set answer is NIL."""
    reply = chat_client.chat(
        render_selection_prompt(ctx), temperature=0.0, max_tokens=max_tokens, tag=tag
    )
    qid = extract_selection(reply, {c.qid for c in ctx.candidates})
    if qid is not None:
        return AdjudicationResult(qid, ROUTE_SINGLE_SELECTED, (reply,))
    return AdjudicationResult(None, ROUTE_SINGLE_EMPTY, (reply,))


class HttpChatClient:
    """Client for the chat wire protocol: ``POST {endpoint}/chat``.

    One retry on transport error; status >= 400 or a second transport failure
    is a hard error. ``retries`` counts transport retries performed.
    """

    def __init__(
        self,
        endpoint: str,
        client: Optional[httpx.Client] = None,
        retry_backoff: float = 0.5,
        timeout: float = 120.0,
    ):
        self._url = endpoint.rstrip("/") + "/chat"
        self._client = client or httpx.Client(timeout=timeout)
        self._retry_backoff = retry_backoff
        self.retries = 0

    def chat(self, messages, temperature: float = 0.0, max_tokens: int = 256, tag=None) -> str:
        if not messages:
            raise PromptError("chat requires a non-empty message list")
        payload = {
            "messages": list(messages),
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        for attempt in (0, 1):
            try:
                response = self._client.post(self._url, json=payload)
            except httpx.TransportError as exc:
                if attempt:
                    raise ChatBackendError(f"transport failure after retry: {exc}") from exc
                self.retries += 1
                time.sleep(self._retry_backoff)
                continue
            if response.status_code >= 400:
                raise ChatBackendError(
                    f"chat endpoint returned status {response.status_code}",
                    status=response.status_code,
                )
            try:
                data = response.json()
            except ValueError as exc:
                raise ChatBackendError(f"chat endpoint returned invalid JSON: {exc}") from exc
            content = data.get("content") if isinstance(data, dict) else None
            if not isinstance(content, str):
                raise ChatBackendError("chat endpoint response lacks a string 'content'")
            return content
        raise AssertionError("unreachable")


def chat(client, messages, temperature: float = 0.0, max_tokens: int = 256) -> str:
    """Send one chat turn through whichever client is configured."""
    return client.chat(messages, temperature=temperature, max_tokens=max_tokens)
