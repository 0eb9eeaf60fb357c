"""Shared fixtures: corpus/KB/index builders and the embedding-endpoint stub."""

from __future__ import annotations

import json
import os

import httpx
import numpy as np
import pytest

from mhel import corpus, index, kb
from mhel.encoders import hash_vector

ENTITY_ROWS = [
    {
        "qid": "Q90",
        "labels": {"en": "Paris", "fr": "Paris"},
        "descriptions": {"en": "capital of France"},
        "earliest_date": "0300",
        "entity_type": "LOC",
    },
    {
        "qid": "Q64",
        "labels": {"de": "Berlin", "en": "Berlin"},
        "descriptions": {"de": "Hauptstadt Deutschlands"},
        "entity_type": "LOC",
    },
    {
        "qid": "Q1017",
        "labels": {"de": "Aachen"},
        "descriptions": {},
        "entity_type": "LOC",
    },
    {
        "qid": "Q7251",
        "labels": {"en": "Alan Turing"},
        "descriptions": {"en": "mathematician"},
        "earliest_date": "1912-06-23",
        "entity_type": "PER",
    },
    {
        "qid": "Q37340",
        "labels": {"en": "Apollo", "it": "Apollo"},
        "descriptions": {"en": "Greek god"},
        "entity_type": "PER",
    },
]

MENTION_ROWS = [
    {
        "doc_id": "doc-1",
        "mention_id": "m1",
        "text": "News from Paris about the exposition.",
        "start": 10,
        "end": 15,
        "language": "en",
        "language_name": "English",
        "document_date": "1900-04-14",
        "genre": "news",
        "gold_qid": "Q90",
    },
    {
        "doc_id": "doc-1",
        "mention_id": "m2",
        # "Grüße aus Berlin" -- ü and ß are two bytes each, so Berlin starts at byte 12
        "text": "Grüße aus Berlin, 1901.",
        "start": 12,
        "end": 18,
        "language": "de",
        "language_name": "German",
        "document_date": "1901-12-01",
        "genre": "news",
        "gold_qid": "Q64",
    },
    {
        "doc_id": "doc-2",
        "mention_id": "m3",
        "text": "Der Dichter besuchte Aachen im Winter.",
        "start": 21,
        "end": 27,
        "language": "de",
        "language_name": "German",
        "document_date": "1877",
        "genre": "literature",
        "gold_qid": "NIL",
    },
]


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


# manually annotated 100-error sample: per-dataset relation counts
ERROR_FIXTURE = {
    "hipe2020": {"false": 15, "exact": 4, "close": 2, "related": 2, "broader": 0, "narrower": 2},
    "newseye": {"false": 8, "exact": 8, "close": 2, "related": 6, "broader": 1, "narrower": 0},
    "ajmc": {"false": 16, "exact": 4, "close": 1, "related": 3, "broader": 0, "narrower": 1},
    "mhercl": {"false": 20, "exact": 2, "close": 0, "related": 2, "broader": 0, "narrower": 1},
}


def error_fixture_annotations():
    """(mention_id, relation, dataset) triples realizing ERROR_FIXTURE."""
    triples = []
    for dataset, counts in ERROR_FIXTURE.items():
        for relation, count in counts.items():
            for i in range(count):
                triples.append((f"{dataset}-{relation}-{i}", relation, dataset))
    return triples


def records_with_recall_curve(targets, steps):
    """Dev records whose Recall@step hits each target fraction exactly.

    Uses a denominator of 1000: record i finds its gold at a rank chosen so
    that exactly round(target*1000) records are found by each step.
    """
    from mhel.calibrate import DevRetrievalRecord
    from mhel.index import RetrievalHit

    denominator = 1000
    counts = [round(t * denominator) for t in targets]
    assert all(a <= b for a, b in zip(counts, counts[1:]))
    depths = []
    previous = 0
    for step, count in zip(steps, counts):
        depths.extend([step] * (count - previous))
        previous = count
    depths.extend([steps[-1] + 1] * (denominator - previous))  # never found
    records = []
    for i, depth in enumerate(depths):
        scored = [(f"D{j}", float(depth + 1 - j)) for j in range(depth - 1)]
        scored.append(("G", 1.0))
        hits = tuple(
            RetrievalHit(qid=qid, score=score, rank=r)
            for r, (qid, score) in enumerate(scored, 1)
        )
        records.append(
            DevRetrievalRecord(mention_id=f"m{i}", gold_qid="G", ranked_hits=hits)
        )
    return records


@pytest.fixture
def jsonl_writer(tmp_path):
    def write(name, rows):
        return write_jsonl(tmp_path / name, rows)

    return write


@pytest.fixture
def kb_path(jsonl_writer):
    return jsonl_writer("entities.jsonl", ENTITY_ROWS)


@pytest.fixture
def kb_store(kb_path, tmp_path):
    store, _ = kb.import_kb(kb_path, tmp_path / "kb.sqlite")
    yield store
    store.close()


@pytest.fixture
def corpus_path(jsonl_writer):
    return jsonl_writer("corpus.jsonl", MENTION_ROWS)


def build_world(root, n_mentions: int = 20, dim: int = 32, seed: int = 0, nil_every: int = 5):
    """Self-consistent synthetic task under ``root``.

    One entity per mention; the index row for entity i is the mock encoding
    of mention i's marked text, so gold sits at rank 1 with a high score.
    Every nil_every-th mention is gold-NIL and gets a distractor row instead.
    """
    rng = np.random.default_rng(seed)
    names = [f"Entity{i:03d}" for i in range(n_mentions)]
    mentions, ids, rows = [], [], []
    for i, name in enumerate(names):
        text = f"Old chronicle {i} speaks of {name} at great length."
        start = text.index(name)
        mention = {
            "doc_id": f"doc-{i // 4}",
            "mention_id": f"m{i:03d}",
            "text": text,
            "start": start,
            "end": start + len(name),
            "language": "en",
            "language_name": "English",
            "document_date": f"{1850 + i}",
            "genre": "news",
        }
        qid = f"Q{1000 + i}"
        if nil_every and i % nil_every == nil_every - 1:
            mention["gold_qid"] = "NIL"
            rows.append(rng.standard_normal(dim).astype(np.float32))
        else:
            mention["gold_qid"] = qid
            marked = corpus.mark_mention(text, start, start + len(name))
            rows.append(hash_vector(marked, "en", dim))
        ids.append(qid)
        mentions.append(mention)
    paths = {
        "corpus": root / "world-corpus.jsonl",
        "vectors": root / "world-vecs.bin",
        "ids": root / "world-ids.jsonl",
        "kb": root / "world-kb.jsonl",
        "store": root / "world-kb.sqlite",
    }
    write_jsonl(paths["corpus"], mentions)
    index.write_index(paths["vectors"], paths["ids"], np.stack(rows), ids)
    entities = [
        {"qid": qid, "labels": {"en": name}, "descriptions": {"en": f"synthetic entity {name}"}}
        for qid, name in zip(ids, names)
    ]
    write_jsonl(paths["kb"], entities)
    store, _ = kb.import_kb(paths["kb"], paths["store"])
    store.close()
    return {"paths": paths, "mentions": mentions, "ids": ids, "dim": dim}


@pytest.fixture
def world_builder(tmp_path):
    def build(**kwargs):
        return build_world(tmp_path, **kwargs)

    return build


class EmbedProtocolStub:
    """Reference implementation of the embedding wire protocol for tests."""

    def __init__(self, dim: int = 16, max_batch: int = 64):
        self.dim = dim
        self.max_batch = max_batch

    def handle(self, request: httpx.Request) -> httpx.Response:
        if request.method == "GET" and request.url.path == "/health":
            return httpx.Response(
                200, json={"status": "ok", "dim": self.dim, "model": "hash-stub"}
            )
        if request.method != "POST" or request.url.path != "/embed":
            return httpx.Response(404, json={"error": "no such route"})
        try:
            payload = json.loads(request.content)
        except ValueError:
            return httpx.Response(400, json={"error": "invalid JSON"})
        items = payload.get("items") if isinstance(payload, dict) else None
        dim = payload.get("dim") if isinstance(payload, dict) else None
        if not isinstance(items, list) or any(
            not isinstance(it, dict)
            or not isinstance(it.get("text"), str)
            or not isinstance(it.get("language"), str)
            for it in items
        ):
            return httpx.Response(400, json={"error": "items must be {text, language} objects"})
        if len(items) > self.max_batch:
            return httpx.Response(413, json={"error": f"batch exceeds {self.max_batch}"})
        if dim != self.dim:
            return httpx.Response(400, json={"error": f"dim must be {self.dim}"})
        vectors = [
            [float(x) for x in hash_vector(it["text"], it["language"], self.dim)]
            for it in items
        ]
        return httpx.Response(200, json={"vectors": vectors, "dim": self.dim})


@pytest.fixture
def embed_max_batch() -> int:
    return int(os.environ.get("MHEL_SHIM_MAX_BATCH", "64"))


@pytest.fixture
def embed_client(embed_max_batch):
    """HTTP client for an embedding endpoint.

    Defaults to the in-process stub; MHEL_SHIM_URL points the same tests at
    a real server, which must then pass unchanged.
    """
    url = os.environ.get("MHEL_SHIM_URL")
    if url:
        with httpx.Client(base_url=url, timeout=30.0) as client:
            yield client
    else:
        stub = EmbedProtocolStub(dim=16, max_batch=embed_max_batch)
        transport = httpx.MockTransport(stub.handle)
        with httpx.Client(base_url="http://embed.test", transport=transport) as client:
            yield client
