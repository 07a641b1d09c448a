"""Versioned manifests: the logical control structure.

A manifest is one immutable object per version holding the cumulative batch
list (above the trim floor) and a per-producer state map. Publication is a
conditional put on the next version name, which both linearizes concurrent
producers and prevents version reuse, so there is no ABA hazard: a producer
that loses the race re-reads the winner and rebases.

Encoding is canonical JSON (sorted keys, no insignificant whitespace), so
encode(decode(encode(m))) is byte-stable and both this implementation and any
other client produce identical manifest objects for identical logical state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .errors import NotFound, SchemaViolation, StaleSequence, TransientIo, VersionOverflow
from .store import ObjectStore, PutOutcome
from .tgb import MeshSpec

VERSION_PAD = 8  # manifest names are zero-padded to 8 digits

GC_PRODUCER_ID = "__gc__"  # reserved id for trim commits


@dataclass(frozen=True)
class TgbDescriptor:
    """Identity and location of one committed Global Batch."""

    step_index: int
    object_keys: tuple[str, ...]
    mesh: MeshSpec
    total_bytes: int
    producer_id: str
    producer_seq: int


@dataclass(frozen=True)
class ProducerState:
    producer_id: str
    committed_offset: int  # highest committed producer_seq, -1 if none
    last_commit_version: int


@dataclass(frozen=True)
class Manifest:
    version: int
    tgb_list: tuple[TgbDescriptor, ...]
    producer_states: dict[str, ProducerState]
    trim_floor: int = 0

    def next_step(self) -> int:
        return self.trim_floor + len(self.tgb_list)

    def committed_offset(self, producer_id: str) -> int:
        state = self.producer_states.get(producer_id)
        return state.committed_offset if state else -1

    def descriptor_at(self, step: int) -> TgbDescriptor:
        return self.tgb_list[step - self.trim_floor]


EMPTY = Manifest(version=-1, tgb_list=(), producer_states={}, trim_floor=0)


@dataclass(frozen=True)
class CommitOutcome:
    committed: bool
    version: int | None = None

    @staticmethod
    def conflict() -> "CommitOutcome":
        return CommitOutcome(False)


def manifest_key(namespace: str, version: int) -> str:
    if version < 0 or version >= 10**VERSION_PAD:
        raise VersionOverflow(f"version {version} outside 0..{10**VERSION_PAD - 1}")
    return f"{namespace}/manifest/{version:0{VERSION_PAD}d}.manifest"


def _descriptor_to_obj(d: TgbDescriptor) -> dict:
    return {
        "mesh": {"cp": d.mesh.cp, "dp": d.mesh.dp},
        "object_keys": list(d.object_keys),
        "producer_id": d.producer_id,
        "producer_seq": d.producer_seq,
        "step_index": d.step_index,
        "total_bytes": d.total_bytes,
    }


def _state_to_obj(s: ProducerState) -> dict:
    obj = {
        "last_commit_version": s.last_commit_version,
        "producer_id": s.producer_id,
    }
    # -1 (nothing committed yet) is encoded as an absent field
    if s.committed_offset >= 0:
        obj["committed_offset"] = s.committed_offset
    return obj


def encode_manifest(m: Manifest) -> bytes:
    obj = {
        "producer_states": {
            pid: _state_to_obj(s) for pid, s in m.producer_states.items()
        },
        "tgb_list": [_descriptor_to_obj(d) for d in m.tgb_list],
        "trim_floor": m.trim_floor,
        "version": m.version,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise SchemaViolation(msg)


def decode_manifest(data: bytes) -> Manifest:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaViolation(f"manifest is not valid JSON: {exc}") from exc
    _require(isinstance(obj, dict), "manifest root must be an object")
    for field in ("producer_states", "tgb_list", "trim_floor", "version"):
        _require(field in obj, f"missing field {field!r}")
    version = obj["version"]
    trim_floor = obj["trim_floor"]
    _require(isinstance(version, int) and version >= 0, "version must be a non-negative int")
    _require(isinstance(trim_floor, int) and trim_floor >= 0, "trim_floor must be >= 0")

    descriptors = []
    seen: set[tuple[str, int]] = set()
    for i, raw in enumerate(obj["tgb_list"]):
        _require(isinstance(raw, dict), "tgb_list entries must be objects")
        try:
            mesh = MeshSpec(raw["mesh"]["dp"], raw["mesh"]["cp"])
            d = TgbDescriptor(
                step_index=raw["step_index"],
                object_keys=tuple(raw["object_keys"]),
                mesh=mesh,
                total_bytes=raw["total_bytes"],
                producer_id=raw["producer_id"],
                producer_seq=raw["producer_seq"],
            )
        except (KeyError, TypeError) as exc:
            raise SchemaViolation(f"bad descriptor at index {i}: {exc}") from exc
        _require(d.step_index == trim_floor + i,
                 f"step {d.step_index} at position {i} breaks density from floor {trim_floor}")
        _require(len(d.object_keys) >= 1, "descriptor must reference at least one object")
        _require(d.total_bytes >= 0 and d.producer_seq >= 0, "negative descriptor fields")
        ident = (d.producer_id, d.producer_seq)
        _require(ident not in seen, f"duplicate (producer_id, producer_seq) {ident}")
        seen.add(ident)
        descriptors.append(d)

    states: dict[str, ProducerState] = {}
    _require(isinstance(obj["producer_states"], dict), "producer_states must be a map")
    for pid, raw in obj["producer_states"].items():
        _require(isinstance(raw, dict), "producer state must be an object")
        _require(raw.get("producer_id") == pid, f"producer state key {pid!r} mismatches body")
        offset = raw.get("committed_offset", -1)
        _require(isinstance(offset, int) and offset >= -1, "bad committed_offset")
        states[pid] = ProducerState(
            producer_id=pid,
            committed_offset=offset,
            last_commit_version=raw.get("last_commit_version", 0),
        )
    return Manifest(
        version=version,
        tgb_list=tuple(descriptors),
        producer_states=states,
        trim_floor=trim_floor,
    )


def latest(store: ObjectStore, namespace: str) -> Manifest | None:
    """Highest committed manifest at some point during the call, or None.

    A bounded scan: list the manifest prefix (names sort numerically thanks to
    zero padding), then probe upward past the listing in case commits landed
    after the list snapshot. Deleted versions (reclaimed below the watermark)
    are skipped by moving to the next listed name.
    """
    prefix = f"{namespace}/manifest/"
    names = store.list(prefix)
    versions = []
    for name in names:
        base = name[len(prefix):]
        if base.endswith(".manifest"):
            try:
                versions.append(int(base[: -len(".manifest")]))
            except ValueError:
                continue
    candidate = max(versions) if versions else -1
    # probe past the listing; each miss is one bounded read
    while True:
        try:
            store.get(manifest_key(namespace, candidate + 1))
            candidate += 1
        except NotFound:
            break
    if candidate < 0:
        return None
    while candidate >= 0:
        try:
            data = store.get(manifest_key(namespace, candidate))
        except NotFound:
            # reclaimed or listing raced a delete; fall back down the listing
            lower = [v for v in versions if v < candidate]
            if not lower:
                return None
            candidate = max(lower)
            continue
        m = decode_manifest(data)
        _require(m.version == candidate, f"manifest {candidate} carries version {m.version}")
        return m
    return None


def build_candidate(
    base: Manifest, new_tgbs: list[TgbDescriptor], producer_id: str
) -> Manifest:
    """Append new descriptors to ``base``: assigns dense step indices, bumps
    the version, and advances this producer's committed offset.

    Callers must have filtered already-committed sequences; a stale or
    non-consecutive producer_seq raises StaleSequence rather than silently
    double-publishing after recovery.
    """
    offset = base.committed_offset(producer_id)
    expected = offset + 1
    for d in new_tgbs:
        if d.producer_id != producer_id:
            raise StaleSequence(
                f"descriptor for {d.producer_id!r} in a commit by {producer_id!r}"
            )
        if d.producer_seq <= offset:
            raise StaleSequence(
                f"producer_seq {d.producer_seq} already committed (offset {offset})"
            )
        if d.producer_seq != expected:
            raise StaleSequence(
                f"producer_seq {d.producer_seq} not consecutive (expected {expected})"
            )
        expected += 1

    version = base.version + 1
    step = base.next_step()
    appended = []
    for d in new_tgbs:
        appended.append(replace(d, step_index=step))
        step += 1

    states = dict(base.producer_states)
    if new_tgbs:
        states[producer_id] = ProducerState(
            producer_id=producer_id,
            committed_offset=new_tgbs[-1].producer_seq,
            last_commit_version=version,
        )
    return Manifest(
        version=version,
        tgb_list=base.tgb_list + tuple(appended),
        producer_states=states,
        trim_floor=base.trim_floor,
    )


def try_commit(store: ObjectStore, namespace: str, candidate: Manifest) -> CommitOutcome:
    """One conditional put of the candidate at its version name.

    TransientIo propagates: the put may or may not have landed, and the caller
    must resolve via resolve_ambiguous_commit before doing anything else.
    """
    key = manifest_key(namespace, candidate.version)
    outcome = store.put_if_absent(key, encode_manifest(candidate))
    if outcome is PutOutcome.CREATED:
        return CommitOutcome(True, candidate.version)
    return CommitOutcome.conflict()


def resolve_ambiguous_commit(
    store: ObjectStore, namespace: str, candidate: Manifest
) -> CommitOutcome:
    """After a TransientIo from try_commit: re-read the version name.

    Byte equality with the candidate means our put landed (success); any other
    content means a competitor owns the version (conflict); absence means the
    put never happened, which we also report as a conflict so the caller takes
    the ordinary rebase path and retries idempotently.
    """
    key = manifest_key(namespace, candidate.version)
    try:
        data = store.get(key)
    except NotFound:
        return CommitOutcome.conflict()
    if data == encode_manifest(candidate):
        return CommitOutcome(True, candidate.version)
    return CommitOutcome.conflict()


def commit_resolved(
    store: ObjectStore, namespace: str, candidate: Manifest, max_io_retries: int = 8
) -> CommitOutcome:
    """try_commit with the ambiguity rule applied on TransientIo."""
    try:
        return try_commit(store, namespace, candidate)
    except TransientIo:
        for _ in range(max_io_retries):
            try:
                return resolve_ambiguous_commit(store, namespace, candidate)
            except TransientIo:
                continue
        raise


def filter_uncommitted(
    winner: Manifest, local_tgbs: list[TgbDescriptor], producer_id: str
) -> list[TgbDescriptor]:
    """Drop descriptors the winner already incorporates (verifiable from the
    persisted producer state), keeping exactly-once across ambiguous commits."""
    offset = winner.committed_offset(producer_id)
    return [d for d in local_tgbs if d.producer_seq > offset]


def rebase(
    winner: Manifest, local_tgbs: list[TgbDescriptor], producer_id: str
) -> tuple[Manifest, list[TgbDescriptor]]:
    """Rebuild a candidate on top of the committed winner.

    Returns (candidate, appended). ``appended`` is empty when the winner
    already contains every local batch, in which case the producer just clears
    its buffer instead of committing an empty version.
    """
    appended = filter_uncommitted(winner, local_tgbs, producer_id)
    return build_candidate(winner, appended, producer_id), appended
