"""Mention encoders: turn a marked context into a fixed-dimension embedding.

Three backends share one interface: ``http`` speaks the embedding wire
protocol, ``precomputed`` serves stored rows, and ``mock`` derives vectors
from a hash so offline runs are deterministic. The real multilingual encoder
lives behind the wire protocol; this package never loads model weights.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from hashlib import blake2b
from typing import Optional, Sequence

import httpx
import numpy as np

from .errors import ConfigError, DimensionError, EncoderBackendError, PromptError

MARKER = "[ENT]"


@dataclass(frozen=True)
class MarkedText:
    """Context with the mention delimited by exactly two ``[ENT]`` markers."""

    text: str
    language: str

    def __post_init__(self):
        occurrences = self.text.count(MARKER)
        if occurrences != 2:
            raise PromptError(
                f"marked text must contain exactly two {MARKER!r} markers, found {occurrences}"
            )
        mention = self.text.split(MARKER)[1]
        if not mention.strip():
            raise PromptError("mention between markers is empty")


@dataclass(frozen=True)
class EncoderConfig:
    backend: str  # http | precomputed | mock
    dim: int
    endpoint: Optional[str] = None

    def __post_init__(self):
        if self.backend not in ("http", "precomputed", "mock"):
            raise ConfigError(f"unknown encoder backend {self.backend!r}")
        if self.dim < 1:
            raise ConfigError("encoder dim must be >= 1")
        if self.backend == "http" and not self.endpoint:
            raise ConfigError("http encoder backend requires an endpoint")


def _default_batch(backend, batch: Sequence[MarkedText]) -> list[np.ndarray]:
    out = []
    for i, marked in enumerate(batch):
        try:
            out.append(backend.encode(marked))
        except Exception as exc:
            raise EncoderBackendError(f"element {i}: {exc}") from exc
    return out


def hash_vector(text: str, language: str, dim: int) -> np.ndarray:
    """Deterministic vector for (text, language, dim).

    A 64-bit hash of the inputs keys a counter-based generator, so identical
    inputs yield identical vectors across processes and platforms.
    """
    payload = language.encode("utf-8") + b"\x00" + text.encode("utf-8")
    key = int.from_bytes(blake2b(payload, digest_size=8).digest(), "little")
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal(dim).astype(np.float32)


class MockEncoder:
    """Hash-seeded deterministic encoder; see hash_vector."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ConfigError("encoder dim must be >= 1")
        self.dim = dim

    def encode(self, marked: MarkedText) -> np.ndarray:
        return hash_vector(marked.text, marked.language, self.dim)

    def encode_batch(self, batch: Sequence[MarkedText]) -> list[np.ndarray]:
        return _default_batch(self, batch)


class PrecomputedEncoder:
    """Serves stored vectors keyed by the exact marked text."""

    def __init__(self, table: dict[str, np.ndarray], dim: int):
        self.dim = dim
        self._table = {key: np.asarray(vec, dtype=np.float32) for key, vec in table.items()}
        for key, vec in self._table.items():
            if vec.shape != (dim,):
                raise DimensionError(f"stored vector for key {key!r} has shape {vec.shape}")

    @classmethod
    def from_files(cls, vectors_path, ids_path) -> "PrecomputedEncoder":
        """Load a table from the binary vector format; ids are the lookup keys."""
        from .index import load_index

        index = load_index(vectors_path, ids_path)
        rows = index.rows()
        table = {key: rows[i].copy() for i, key in enumerate(index.ids)}
        return cls(table, index.dim)

    def encode(self, marked: MarkedText) -> np.ndarray:
        vec = self._table.get(marked.text)
        if vec is None:
            raise EncoderBackendError(f"no precomputed vector for key {marked.text!r}")
        return vec.copy()

    def encode_batch(self, batch: Sequence[MarkedText]) -> list[np.ndarray]:
        return _default_batch(self, batch)


class HttpEncoder:
    """Client for the embedding wire protocol: ``POST {endpoint}/embed``.

    One retry with backoff on transport errors, then hard error. In-flight
    requests are bounded by max_inflight (shared semaphore).
    """

    def __init__(
        self,
        endpoint: str,
        dim: int,
        client: Optional[httpx.Client] = None,
        max_inflight: int = 4,
        retry_backoff: float = 0.5,
        timeout: float = 30.0,
    ):
        if dim < 1:
            raise ConfigError("encoder dim must be >= 1")
        self.dim = dim
        self._url = endpoint.rstrip("/") + "/embed"
        self._client = client or httpx.Client(timeout=timeout)
        self._semaphore = threading.BoundedSemaphore(max_inflight)
        self._retry_backoff = retry_backoff

    def encode(self, marked: MarkedText) -> np.ndarray:
        return self.encode_batch([marked])[0]

    def encode_batch(self, batch: Sequence[MarkedText]) -> list[np.ndarray]:
        if not batch:
            return []
        payload = {
            "items": [{"text": m.text, "language": m.language} for m in batch],
            "dim": self.dim,
        }
        data = self._post(payload)
        vectors = data.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(batch):
            raise EncoderBackendError(
                f"expected {len(batch)} vectors, got "
                f"{len(vectors) if isinstance(vectors, list) else type(vectors).__name__}"
            )
        if data.get("dim") != self.dim:
            raise DimensionError(
                f"embedding endpoint answered dim {data.get('dim')!r}, requested {self.dim}"
            )
        out = []
        for i, values in enumerate(vectors):
            vec = np.asarray(values, dtype=np.float32)
            if vec.shape != (self.dim,):
                raise DimensionError(
                    f"element {i}: expected {self.dim} values, got {vec.shape}"
                )
            if not np.isfinite(vec).all():
                raise EncoderBackendError(f"element {i}: non-finite value in vector")
            out.append(vec)
        return out

    def _post(self, payload: dict) -> dict:
        with self._semaphore:
            for attempt in (0, 1):
                try:
                    response = self._client.post(self._url, json=payload)
                except httpx.TransportError as exc:
                    if attempt:
                        raise EncoderBackendError(
                            f"transport failure after retry: {exc}"
                        ) from exc
                    time.sleep(self._retry_backoff)
                    continue
                if response.status_code >= 400:
                    raise EncoderBackendError(
                        f"embedding endpoint returned status {response.status_code}",
                        status=response.status_code,
                    )
                try:
                    return response.json()
                except ValueError as exc:
                    raise EncoderBackendError(
                        f"embedding endpoint returned invalid JSON: {exc}"
                    ) from exc
        raise AssertionError("unreachable")


def encode(backend, marked: MarkedText) -> np.ndarray:
    """Encode one marked text with whichever backend is configured."""
    return backend.encode(marked)


def encode_batch(backend, batch: Sequence[MarkedText]) -> list[np.ndarray]:
    """Elementwise encode; any element failure fails the batch naming the index."""
    return backend.encode_batch(batch)
