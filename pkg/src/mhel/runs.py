"""Run orchestration: config resolution, backend construction, manifests.

Both user-facing frontends (CLI and HTTP service) call these functions, so
a linking run behaves identically no matter how it was launched.
"""

from __future__ import annotations

import math
import os
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import __version__, calibrate, corpus, kb, metrics
from .adjudicator import HttpChatClient
from .encoders import HttpEncoder, MockEncoder, PrecomputedEncoder
from .errors import ConfigError, SelfTestError
from .index import brute_force_search, load_index, search
from .mocks import load_chat_script
from .pipeline import LinkDeps, PipelineConfig, link_corpus

ENV_ENCODER = "MHEL_ENCODER_ENDPOINT"
ENV_CHAT = "MHEL_CHAT_ENDPOINT"

_LINK_KEYS = {
    "vectors": None,
    "ids": None,
    "store": None,
    "variant": None,
    "prompt": "chain",
    "k": 10,
    "theta": None,
    "encoder_endpoint": None,
    "chat_endpoint": None,
    "max_inflight": 1,
    "on_backend_failure": "fallback_top1",
    "max_tokens": 256,
    "models": None,
}

_POLICY_ALIASES = {
    "fallback_top1": "fallback_top1",
    "fallback-top1": "fallback_top1",
    "fail_run": "fail_run",
    "fail": "fail_run",
}


def resolve_link_config(
    file_config: Optional[Mapping] = None,
    overrides: Optional[Mapping] = None,
    env: Optional[Mapping[str, str]] = None,
) -> dict:
    """Effective link config: flag overrides > config file > env > defaults.

    The environment supplies endpoint defaults only. Unknown keys in the
    config file are hard errors, not silently dropped.
    """
    env = os.environ if env is None else env
    resolved = dict(_LINK_KEYS)
    for source in (file_config or {}, overrides or {}):
        for key, value in source.items():
            if key not in _LINK_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            if value is not None:
                resolved[key] = value
    if resolved["encoder_endpoint"] is None:
        resolved["encoder_endpoint"] = env.get(ENV_ENCODER)
    if resolved["chat_endpoint"] is None:
        resolved["chat_endpoint"] = env.get(ENV_CHAT)
    for key in ("vectors", "ids", "store"):
        if not resolved[key]:
            raise ConfigError(f"link config requires {key!r}")
    if not resolved["variant"]:
        raise ConfigError("link config requires 'variant' (vanilla or threshold)")
    if not resolved["encoder_endpoint"]:
        raise ConfigError(
            "no encoder endpoint configured: pass --encoder-endpoint, set the "
            f"config key 'encoder_endpoint', or export {ENV_ENCODER}"
        )
    policy = _POLICY_ALIASES.get(str(resolved["on_backend_failure"]))
    if policy is None:
        raise ConfigError(
            f"unknown backend failure policy {resolved['on_backend_failure']!r}"
        )
    resolved["on_backend_failure"] = policy
    if resolved["theta"] is not None:
        resolved["theta"] = float(resolved["theta"])
    if resolved["models"] is not None and not isinstance(resolved["models"], Mapping):
        raise ConfigError("'models' must be a map of language code to model identifier")
    return resolved


def build_encoder(spec: str, dim: int):
    """Encoder from an endpoint spec.

    Grammar: ``mock`` | ``mock:<dim>`` | ``precomputed:<vectors>,<ids>`` |
    ``http(s)://host``. The dim argument (normally the index dim) applies
    unless the spec pins its own.
    """
    if spec == "mock":
        return MockEncoder(dim)
    if spec.startswith("mock:"):
        try:
            return MockEncoder(int(spec.split(":", 1)[1]))
        except ValueError as exc:
            raise ConfigError(f"bad mock encoder spec {spec!r}: {exc}") from exc
    if spec.startswith("precomputed:"):
        rest = spec.split(":", 1)[1]
        parts = rest.split(",")
        if len(parts) != 2 or not all(parts):
            raise ConfigError(
                f"bad precomputed encoder spec {spec!r}; "
                "expected precomputed:<vectors>,<ids>"
            )
        return PrecomputedEncoder.from_files(parts[0], parts[1])
    if spec.startswith(("http://", "https://")):
        return HttpEncoder(spec, dim)
    raise ConfigError(f"unknown encoder endpoint {spec!r}")


def build_chat_client(spec: Optional[str]):
    """Chat client from an endpoint spec: ``mock:<script.json>`` | URL | None."""
    if spec is None:
        return None
    if spec.startswith("mock:"):
        return load_chat_script(spec.split(":", 1)[1])
    if spec.startswith(("http://", "https://")):
        return HttpChatClient(spec)
    raise ConfigError(f"unknown chat endpoint {spec!r}")


def _json_safe(value):
    """Replace non-finite floats with their string spelling for JSON output."""
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_import_kb(jsonl_path, store_path) -> dict:
    store, count = kb.import_kb(jsonl_path, store_path)
    store.close()
    return {"store": str(store_path), "entities": count}


def run_build_index(
    vectors_path, ids_path, check: bool = False, sample: int = 8, k: int = 10
) -> dict:
    """Load and validate an index; optionally self-test search on sampled rows.

    The self-test replays stored rows as queries and demands bit-for-bit
    agreement (scores and order) between the vectorized search and the
    scalar reference implementation.
    """
    index = load_index(vectors_path, ids_path)
    info = {"count": index.count, "dim": index.dim, "checked_queries": 0}
    if check and index.count:
        rng = np.random.Generator(np.random.Philox(key=0))
        picks = rng.choice(index.count, size=min(sample, index.count), replace=False)
        rows = index.rows()
        for row in sorted(int(i) for i in picks):
            query = rows[row]
            fast = search(index, query, k)
            slow = brute_force_search(index, query, k)
            if fast != slow:
                raise SelfTestError(
                    f"search disagrees with the scalar oracle on row {row}"
                )
            info["checked_queries"] += 1
    return info


def run_calibrate(
    dev_path,
    k_steps=calibrate.DEFAULT_K_STEPS,
    epsilon: float = calibrate.DEFAULT_EPSILON,
) -> dict:
    records = calibrate.load_dev_retrievals(dev_path)
    config = calibrate.CalibrationConfig(k_steps=tuple(k_steps), epsilon=epsilon)
    theta = calibrate.calibrate_threshold(records)
    block = calibrate.select_block_size(records, config)
    curve = calibrate.recall_curve(records, config.k_steps)
    return {
        "theta": theta,
        "k": block,
        "curve": [[k, r] for k, r in curve],
        "records": len(records),
    }


def run_link(
    corpus_path,
    out_path,
    file_config: Optional[Mapping] = None,
    overrides: Optional[Mapping] = None,
    env: Optional[Mapping[str, str]] = None,
) -> dict:
    """Full linking run: load, link, write predictions plus run manifest.

    The manifest lands at ``<out>.manifest.json`` and snapshots the effective
    config, the corpus manifest, timestamps, and component versions.
    """
    resolved = resolve_link_config(file_config, overrides, env)
    started = _utc_now()
    corpus_file = corpus.load_corpus(corpus_path)
    index = load_index(resolved["vectors"], resolved["ids"])
    encoder = build_encoder(resolved["encoder_endpoint"], index.dim)
    chat_client = build_chat_client(resolved["chat_endpoint"])
    config = PipelineConfig(
        variant=resolved["variant"],
        prompt_mode=resolved["prompt"],
        block_size=int(resolved["k"]),
        threshold=resolved["theta"],
        backend_failure_policy=resolved["on_backend_failure"],
    )
    with kb.KbStore(resolved["store"]) as store:
        deps = LinkDeps(
            encoder=encoder,
            index=index,
            store=store,
            chat_client=chat_client,
            max_tokens=int(resolved["max_tokens"]),
        )
        decisions, stats = link_corpus(
            corpus_file.mentions, config, deps, max_inflight=int(resolved["max_inflight"])
        )
    corpus.write_predictions(out_path, decisions)
    manifest = {
        "config": _json_safe(
            {
                **{key: resolved[key] for key in _LINK_KEYS},
                "corpus": str(corpus_path),
                "out": str(out_path),
            }
        ),
        "corpus_manifest": corpus_file.manifest,
        "stats": stats.to_dict(),
        "timestamps": {"started": started, "finished": _utc_now()},
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    manifest_path = Path(str(out_path) + ".manifest.json")
    corpus.write_report(manifest_path, manifest)
    return {
        "out": str(out_path),
        "manifest": str(manifest_path),
        "mentions": stats.mentions,
        "stats": stats.to_dict(),
    }


def run_evaluate(pred_path, gold_path=None, nil: bool = False) -> dict:
    rows = corpus.load_predictions(pred_path)
    gold = corpus.load_gold(gold_path) if gold_path is not None else None
    pairs = metrics.pairs_from_predictions(rows, gold)
    report: dict = {"pairs": len(pairs)}
    report.update(metrics.micro_scores(pairs).to_dict())
    if nil:
        report["nil"] = metrics.nil_scores(pairs).to_dict()
    return report


def run_correlate(pred_path, gold_path=None) -> dict:
    rows = corpus.load_predictions(pred_path)
    gold = corpus.load_gold(gold_path) if gold_path is not None else None
    pairs = metrics.pairs_from_predictions(rows, gold)
    report, skipped = metrics.correlation_from_pairs(pairs)
    out = report.to_dict()
    out["skipped_unscored"] = skipped
    return out


def run_tally(annotations_path) -> dict:
    annotations = corpus.load_error_annotations(annotations_path)
    return metrics.tally_error_relations(annotations)
