"""Deterministic in-process backends: full offline runs without GPUs or network.

These ship in the library, not in the test tree, so the CLI can accept
``--encoder-endpoint mock:<dim>`` and ``--chat-endpoint mock:<script.json>``
for end-to-end demos.
"""

from __future__ import annotations

import itertools
import json
import threading
from typing import Iterable, Optional, Sequence, Union

from .encoders import MockEncoder
from .errors import ChatBackendError, FormatError


def mock_encoder(dim: int) -> MockEncoder:
    """Hash-seeded encoder; see MockEncoder for the determinism contract."""
    return MockEncoder(dim)


class ScriptedChatClient:
    """Replays canned replies and counts calls; counters are lock-protected.

    A list script is consumed in global call order; a map script is keyed by
    the ``tag`` the caller supplies per conversation (the pipeline passes
    mention_id). Exhausted or missing scripts are backend errors.
    """

    def __init__(self, script: Union[Sequence[str], dict]):
        self._lock = threading.Lock()
        self.calls = 0
        self.calls_by_tag: dict = {}
        if isinstance(script, dict):
            self._queues: Optional[dict] = {}
            for key, replies in script.items():
                if isinstance(replies, str) or not isinstance(replies, (list, tuple)):
                    raise FormatError(f"script for {key!r} must be a list of replies")
                self._queues[key] = list(replies)
            self._queue = None
        else:
            self._queues = None
            self._queue = list(script)

    def chat(self, messages, temperature: float = 0.0, max_tokens: int = 256, tag=None) -> str:
        with self._lock:
            self.calls += 1
            if tag is not None:
                self.calls_by_tag[tag] = self.calls_by_tag.get(tag, 0) + 1
            if self._queues is not None:
                queue = self._queues.get(tag)
                if queue is None:
                    raise ChatBackendError(f"no scripted replies for tag {tag!r}")
                if not queue:
                    raise ChatBackendError(f"script exhausted for tag {tag!r}")
                return queue.pop(0)
            if not self._queue:
                raise ChatBackendError(f"script exhausted after {self.calls - 1} calls")
            return self._queue.pop(0)


class FailingChatClient:
    """Fails on scheduled call numbers (1-based), otherwise cycles fixed replies.

    Failures are raised as ChatBackendError, i.e. a backend that already spent
    its retry budget — this exercises the pipeline fallback policies.
    """

    def __init__(self, fail_on: Iterable[int], replies: Sequence[str] = ("no",)):
        self._fail_on = set(fail_on)
        self._replies = itertools.cycle(replies)
        self._lock = threading.Lock()
        self.calls = 0

    def chat(self, messages, temperature: float = 0.0, max_tokens: int = 256, tag=None) -> str:
        with self._lock:
            self.calls += 1
            if self.calls in self._fail_on:
                raise ChatBackendError(f"scheduled failure on call {self.calls}")
            return next(self._replies)


def failing_chat(fail_on: Iterable[int], replies: Sequence[str] = ("no",)) -> FailingChatClient:
    return FailingChatClient(fail_on, replies)


def scripted_chat(script) -> ScriptedChatClient:
    return ScriptedChatClient(script)


def load_chat_script(path) -> ScriptedChatClient:
    """Build a scripted client from a JSON file: a reply list or a tag->replies map."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            script = json.load(handle)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: malformed JSON: {exc.msg}") from exc
    if isinstance(script, list):
        if not all(isinstance(r, str) for r in script):
            raise FormatError(f"{path}: script list must contain only strings")
        return ScriptedChatClient(script)
    if isinstance(script, dict):
        for key, replies in script.items():
            if not isinstance(replies, list) or not all(isinstance(r, str) for r in replies):
                raise FormatError(f"{path}: script for {key!r} must be a list of strings")
        return ScriptedChatClient(script)
    raise FormatError(f"{path}: script must be a JSON list or object")
