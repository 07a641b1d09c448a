"""Consumer watermark objects: the shared primitive between checkpoint
recovery and storage reclamation.

One object per consumer at ``<ns>/watermarks/<consumer_id>.wm``, overwritten
in place on every checkpoint (single writer per key, content only advances).
Canonical JSON so any client writes identical bytes for identical state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import NotFound, SchemaViolation
from .store import ObjectStore


@dataclass(frozen=True)
class Watermark:
    consumer_id: str
    version: int  # manifest version at checkpoint time; gates manifest GC
    step: int  # step index to resume from; gates batch GC


def watermark_key(namespace: str, consumer_id: str) -> str:
    return f"{namespace}/watermarks/{consumer_id}.wm"


def encode_watermark(w: Watermark) -> bytes:
    obj = {"consumer_id": w.consumer_id, "step": w.step, "version": w.version}
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_watermark(data: bytes) -> Watermark:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaViolation(f"watermark is not valid JSON: {exc}") from exc
    try:
        w = Watermark(
            consumer_id=obj["consumer_id"],
            version=obj["version"],
            step=obj["step"],
        )
    except (KeyError, TypeError) as exc:
        raise SchemaViolation(f"bad watermark object: {exc}") from exc
    if not isinstance(w.version, int) or not isinstance(w.step, int):
        raise SchemaViolation("watermark version and step must be integers")
    return w


def read_all(store: ObjectStore, namespace: str) -> list[Watermark]:
    """Every persisted watermark in the namespace."""
    out = []
    for key in store.list(f"{namespace}/watermarks/"):
        if not key.endswith(".wm"):
            continue
        try:
            out.append(decode_watermark(store.get(key)))
        except NotFound:
            continue  # raced a delete; treat as absent
    return out
