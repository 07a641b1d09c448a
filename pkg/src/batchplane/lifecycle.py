"""Checkpoint-aligned retention: logical trim plus physical deletion.

Reclamation is driven entirely by persisted consumer watermarks. The global
watermark (the minimum checkpointed manifest version) gates manifest deletion;
the minimum checkpointed step gates batch deletion via a trim commit. Order
matters for crash safety: trim first, then manifests, then data, so any
partial run leaves only unreferenced garbage that a re-run deletes, never a
dangling reference. Nothing here blocks producers or consumers, and multiple
reclaimers may race harmlessly (deletes are idempotent, the trim is an
ordinary optimistic commit).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import manifest as mf
from . import watermarks as wm
from .errors import NotFound
from .store import ObjectStore
from .watermarks import Watermark

MANIFEST_SUFFIX = ".manifest"


@dataclass
class ReclaimReport:
    w_global: int | None = None
    trimmed_to_step: int | None = None
    manifests_deleted: int = 0
    tgb_objects_deleted: int = 0
    bytes_freed: int = 0

    def as_record(self) -> dict:
        return {
            "w_global": self.w_global,
            "trimmed_to_step": self.trimmed_to_step,
            "manifests_deleted": self.manifests_deleted,
            "tgb_objects_deleted": self.tgb_objects_deleted,
            "bytes_freed": self.bytes_freed,
        }


def global_watermark(marks: list[Watermark]) -> int | None:
    """Min checkpointed version; None (retain everything) with no checkpoints."""
    if not marks:
        return None
    return min(w.version for w in marks)


def _commit_trim(store: ObjectStore, namespace: str, trim_step: int) -> mf.Manifest:
    """Publish a manifest whose floor is trim_step, via the ordinary commit
    protocol under the reserved GC producer id. Retries on conflict like any
    producer; returns the manifest that ends up carrying the floor."""
    while True:
        base = mf.latest(store, namespace)
        if base is None or base.trim_floor >= trim_step:
            return base
        keep = tuple(d for d in base.tgb_list if d.step_index >= trim_step)
        states = dict(base.producer_states)
        states[mf.GC_PRODUCER_ID] = mf.ProducerState(
            producer_id=mf.GC_PRODUCER_ID,
            committed_offset=-1,
            last_commit_version=base.version + 1,
        )
        candidate = mf.Manifest(
            version=base.version + 1,
            tgb_list=keep,
            producer_states=states,
            trim_floor=trim_step,
        )
        outcome = mf.commit_resolved(store, namespace, candidate)
        if outcome.committed:
            return candidate
        # lost to a producer commit; rebase by re-reading and retrying


def _delete_sized(store: ObjectStore, key: str) -> int:
    try:
        size = store.size(key)
    except NotFound:
        return 0
    store.delete(key)
    return size


def reclaim(store: ObjectStore, namespace: str, dry_run: bool = False) -> ReclaimReport:
    """One reclamation pass. Restartable at any point; converges when re-run.

    Steps: read watermarks; trim the manifest to the minimum checkpointed
    step; delete manifest versions below the global watermark; delete batch
    objects that are committed history but no longer referenced. Staged
    objects of live producers (sequence above the committed offset) are never
    touched: they are not garbage, they are queued work.
    """
    report = ReclaimReport()
    marks = wm.read_all(store, namespace)
    if not marks:
        return report
    report.w_global = global_watermark(marks)
    trim_step = min(w.step for w in marks)

    current = mf.latest(store, namespace)
    if current is None:
        return report
    if dry_run:
        report.trimmed_to_step = max(current.trim_floor, trim_step)
        return report

    if current.trim_floor < trim_step:
        current = _commit_trim(store, namespace, trim_step)
    report.trimmed_to_step = current.trim_floor

    # manifests strictly below the global watermark are unreachable from any
    # live checkpoint
    prefix = f"{namespace}/manifest/"
    for key in store.list(prefix):
        name = key[len(prefix):]
        if not name.endswith(MANIFEST_SUFFIX):
            continue
        try:
            version = int(name[: -len(MANIFEST_SUFFIX)])
        except ValueError:
            continue
        if version < report.w_global:
            freed = _delete_sized(store, key)
            if freed:
                report.manifests_deleted += 1
                report.bytes_freed += freed

    # batch objects: delete committed-but-dropped ones. An object is committed
    # history iff its sequence is at or below its producer's committed offset;
    # it is garbage iff additionally no retained descriptor references it.
    referenced: set[str] = set()
    for d in current.tgb_list:
        referenced.update(d.object_keys)
    data_prefix = f"{namespace}/data/"
    for key in store.list(data_prefix):
        if key in referenced or not key.endswith(".tgb"):
            continue
        rel = key[len(data_prefix):]
        parts = rel.split("/")
        if len(parts) != 2:
            continue
        producer_id, name = parts
        try:
            seq = int(name[: -len(".tgb")])
        except ValueError:
            continue
        if seq <= current.committed_offset(producer_id):
            freed = _delete_sized(store, key)
            if freed:
                report.tgb_objects_deleted += 1
                report.bytes_freed += freed
    return report


@dataclass
class StorageCensus:
    manifest_bytes: int = 0
    tgb_bytes: int = 0
    watermark_bytes: int = 0
    manifest_count: int = 0
    tgb_count: int = 0
    watermark_count: int = 0

    @property
    def total_bytes(self) -> int:
        return self.manifest_bytes + self.tgb_bytes + self.watermark_bytes

    def as_record(self) -> dict:
        return {
            "manifest_bytes": self.manifest_bytes,
            "tgb_bytes": self.tgb_bytes,
            "watermark_bytes": self.watermark_bytes,
            "total_bytes": self.total_bytes,
            "manifest_count": self.manifest_count,
            "tgb_count": self.tgb_count,
            "watermark_count": self.watermark_count,
        }


def storage_census(store: ObjectStore, namespace: str) -> StorageCensus:
    """Exact byte totals by category from a listing sweep."""
    census = StorageCensus()
    for key in store.list(f"{namespace}/"):
        try:
            size = store.size(key)
        except NotFound:
            continue  # raced a delete
        if key.startswith(f"{namespace}/manifest/"):
            census.manifest_bytes += size
            census.manifest_count += 1
        elif key.startswith(f"{namespace}/data/"):
            census.tgb_bytes += size
            census.tgb_count += 1
        elif key.startswith(f"{namespace}/watermarks/"):
            census.watermark_bytes += size
            census.watermark_count += 1
    return census
