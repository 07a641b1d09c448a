"""Consumer client: deterministic rank projection, cursor-driven range reads,
checkpoint watermarks, and topology remapping.

A consumer's byte stream is a pure function of (starting cursor, rank spec,
committed manifests): no inter-rank communication happens anywhere. Ranks in
the same (d, c) mesh position read identical ranges; distinct positions read
disjoint ranges of the same object, so every rank of a step observes the same
batch.

Canonical rank layout (fixed here because trainers must agree with it):
DP outermost, then CP, then TP, with PP innermost:

    rank = d * (C*tp*pp) + c * (tp*pp) + t * pp + p
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable

from . import manifest as mf
from . import watermarks as wm
from .errors import (
    InvalidTopology,
    NotFound,
    StepReclaimed,
    UnsupportedRemap,
    WatermarkMissing,
)
from .store import ObjectStore
from .tgb import FooterIndex, read_footer, slice_range
from .watermarks import Watermark, watermark_key


@dataclass(frozen=True)
class RankSpec:
    rank: int
    world_size: int
    dp: int
    cp: int
    tp: int = 1
    pp: int = 1

    def __post_init__(self):
        expected = self.dp * self.cp * self.tp * self.pp
        if min(self.dp, self.cp, self.tp, self.pp) < 1:
            raise InvalidTopology("all mesh degrees must be >= 1")
        if self.world_size != expected:
            raise InvalidTopology(
                f"world_size {self.world_size} != dp*cp*tp*pp = {expected}"
            )
        if not 0 <= self.rank < self.world_size:
            raise InvalidTopology(f"rank {self.rank} outside world of {self.world_size}")


def project(spec: RankSpec) -> tuple[int, int]:
    """Map a rank to its (d, c) data coordinates; TP/PP are transparent."""
    inner = spec.tp * spec.pp
    d = spec.rank // (spec.cp * inner)
    c = (spec.rank // inner) % spec.cp
    return d, c


@dataclass(frozen=True)
class Cursor:
    version: int
    step: int


def _is_power_of_two(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


def _axis_factors(old: int, new: int, axis: str) -> tuple[int, int]:
    """(grow, shrink) for one mesh axis; exactly one of them exceeds 1."""
    if new >= old:
        if new % old != 0 or not _is_power_of_two(new // old):
            raise UnsupportedRemap(f"{axis} {old}->{new} is not a power-of-two growth")
        return new // old, 1
    if old % new != 0 or not _is_power_of_two(old // new):
        raise UnsupportedRemap(f"{axis} {old}->{new} is not a power-of-two reduction")
    return 1, old // new


@dataclass(frozen=True)
class RemapPlan:
    """How a resized mesh consumes batches produced under the old mesh.

    Growth along an axis makes one logical step span several consecutive
    batches (each rank still reads one slice, from the batch holding its
    old-coordinate image). Reduction makes one batch span several logical
    steps, interleaving slice groups by parity: even d-groups feed the first
    step of each pair, odd the second (same rule along c). TP/PP changes do
    not appear at all: they only re-enter through project().
    """

    old_dp: int
    old_cp: int
    new_dp: int
    new_cp: int
    base_step: int  # original step index the plan starts from
    grow_d: int
    shrink_d: int
    grow_c: int
    shrink_c: int

    @property
    def batches_per_step(self) -> int:
        return self.grow_d * self.grow_c

    @property
    def steps_per_batch(self) -> int:
        return self.shrink_d * self.shrink_c

    def read_for(self, logical_step: int, new_spec: RankSpec) -> tuple[int, int, int]:
        """(original step index, d, c) this rank reads at a logical step."""
        if logical_step < 0:
            raise UnsupportedRemap("logical_step must be >= 0")
        d_new, c_new = project(new_spec)
        s = self.steps_per_batch
        phase = logical_step % s
        p_d, p_c = phase // self.shrink_c, phase % self.shrink_c
        q_d, q_c = d_new // self.old_dp, c_new // self.old_cp
        step = self.base_step + (logical_step // s) * self.batches_per_step
        step += q_d * self.grow_c + q_c
        d_old = (d_new % self.old_dp) * self.shrink_d + p_d
        c_old = (c_new % self.old_cp) * self.shrink_c + p_c
        return step, d_old, c_old


def remap(old_spec: RankSpec, new_spec: RankSpec, cursor: Cursor) -> RemapPlan:
    """Plan consumption of existing batches under a resized device mesh."""
    grow_d, shrink_d = _axis_factors(old_spec.dp, new_spec.dp, "dp")
    grow_c, shrink_c = _axis_factors(old_spec.cp, new_spec.cp, "cp")
    return RemapPlan(
        old_dp=old_spec.dp,
        old_cp=old_spec.cp,
        new_dp=new_spec.dp,
        new_cp=new_spec.cp,
        base_step=cursor.step,
        grow_d=grow_d,
        shrink_d=shrink_d,
        grow_c=grow_c,
        shrink_c=shrink_c,
    )


class ConsumerClient:
    """One training rank's read path. Not shareable across threads."""

    def __init__(
        self,
        store: ObjectStore,
        namespace: str,
        consumer_id: str,
        rank_spec: RankSpec,
        cursor: Cursor | None = None,
        poll_interval: float = 0.2,
        prefetch_depth: int = 0,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.store = store
        self.namespace = namespace
        self.consumer_id = consumer_id
        self.rank_spec = rank_spec
        self.cursor = cursor or Cursor(version=-1, step=0)
        self.poll_interval = poll_interval
        self.prefetch_depth = prefetch_depth
        self.clock = clock
        self.footer_cache: dict[str, FooterIndex] = {}
        self._manifest: mf.Manifest | None = None
        self._slice_cache: dict[int, bytes] = {}  # prefetched step -> bytes
        self._last_latest_poll = float("-inf")
        self.bytes_fetched = 0
        self.bytes_consumed = 0

    # -- manifest tracking -------------------------------------------------

    def _load_manifest(self, version: int) -> mf.Manifest | None:
        try:
            data = self.store.get(mf.manifest_key(self.namespace, version))
        except NotFound:
            return None
        self.bytes_fetched += len(data)
        return mf.decode_manifest(data)

    def _adopt(self, m: mf.Manifest) -> None:
        self._manifest = m
        self.cursor = replace(self.cursor, version=m.version)
        self._prefetch()

    def _ensure_manifest(self) -> bool:
        """Make the cached manifest cover the cursor step if any version can.

        Returns False when no committed manifest exposes the step yet."""
        if self._manifest is None:
            if self.cursor.version >= 0:
                m = self._load_manifest(self.cursor.version)
                if m is None:  # reclaimed under us; fall forward to latest
                    m = mf.latest(self.store, self.namespace)
                    if m is not None:
                        self.bytes_fetched += len(mf.encode_manifest(m))
            else:
                m = mf.latest(self.store, self.namespace)
                if m is not None:
                    self.bytes_fetched += len(mf.encode_manifest(m))
            if m is None:
                return False
            self._adopt(m)

        while self.cursor.step >= self._manifest.next_step():
            nxt = self._load_manifest(self._manifest.version + 1)
            if nxt is not None:
                self._adopt(nxt)
                continue
            now = self.clock()
            if now - self._last_latest_poll >= self.poll_interval:
                self._last_latest_poll = now
                m = mf.latest(self.store, self.namespace)
                if m is not None and m.version > self._manifest.version:
                    self.bytes_fetched += len(mf.encode_manifest(m))
                    self._adopt(m)
                    continue
            break

        if self.cursor.step < self._manifest.trim_floor:
            raise StepReclaimed(
                f"step {self.cursor.step} below trim floor {self._manifest.trim_floor}"
            )
        return self.cursor.step < self._manifest.next_step()

    # -- data path ----------------------------------------------------------

    def _footer_for(self, desc: mf.TgbDescriptor) -> FooterIndex:
        key = desc.object_keys[0]
        footer = self.footer_cache.get(key)
        if footer is None:
            footer, fetched = read_footer(self.store, key, desc.total_bytes, desc.mesh)
            self.bytes_fetched += fetched
            self.footer_cache[key] = footer
        return footer

    def _fetch_step(self, step: int) -> bytes:
        desc = self._manifest.descriptor_at(step)
        try:
            footer = self._footer_for(desc)
            d, c = project(self.rank_spec)
            offset, length = slice_range(footer, d, c)
            data = self.store.get_range(desc.object_keys[0], offset, length)
        except NotFound:
            # object gone under a stale manifest view: either GC passed us
            # (fatal by design) or the store lost data (also fatal, louder)
            current = mf.latest(self.store, self.namespace)
            if current is not None and step < current.trim_floor:
                raise StepReclaimed(
                    f"step {step} reclaimed; trim floor is {current.trim_floor}"
                ) from None
            raise
        self.bytes_fetched += len(data)
        return data

    def _prefetch(self) -> None:
        """Opportunistically pull footers and slices for upcoming steps.

        Purely a timing optimization: objects are immutable, so served bytes
        are identical whether or not they came from this cache."""
        if self.prefetch_depth <= 0 or self._manifest is None:
            return
        limit = min(
            self.cursor.step + self.prefetch_depth, self._manifest.next_step()
        )
        for step in range(max(self.cursor.step, self._manifest.trim_floor), limit):
            if step not in self._slice_cache:
                self._slice_cache[step] = self._fetch_step(step)

    def next_batch(self) -> tuple[bytes, Cursor] | None:
        """This rank's slice of the next step, or None when nothing new is
        committed yet (a normal condition, not an error)."""
        if not self._ensure_manifest():
            return None
        step = self.cursor.step
        data = self._slice_cache.pop(step, None)
        if data is None:
            data = self._fetch_step(step)
        self.bytes_consumed += len(data)
        self.cursor = Cursor(version=self._manifest.version, step=step + 1)
        self._prefetch()
        return data, self.cursor

    def next_batch_blocking(self, timeout: float | None = None, sleep=time.sleep):
        start = self.clock()
        while True:
            out = self.next_batch()
            if out is not None:
                return out
            if timeout is not None and self.clock() - start >= timeout:
                return None
            sleep(min(self.poll_interval, 0.05))

    def amplification(self) -> float:
        """Bytes fetched per byte consumed so far."""
        if self.bytes_consumed == 0:
            return 0.0
        return self.bytes_fetched / self.bytes_consumed

    # -- checkpointing -------------------------------------------------------

    def checkpoint(self) -> Watermark:
        """Persist the cursor as this consumer's watermark (overwrite-only;
        a single writer per key and monotone content make plain put safe)."""
        mark = Watermark(
            consumer_id=self.consumer_id,
            version=max(self.cursor.version, 0),
            step=self.cursor.step,
        )
        self.store.put(
            watermark_key(self.namespace, self.consumer_id), wm.encode_watermark(mark)
        )
        return mark

    @classmethod
    def restore(
        cls,
        store: ObjectStore,
        namespace: str,
        consumer_id: str,
        rank_spec: RankSpec,
        **kwargs,
    ) -> "ConsumerClient":
        """Resume from the persisted watermark: no step skipped, none repeated."""
        try:
            data = store.get(watermark_key(namespace, consumer_id))
        except NotFound:
            raise WatermarkMissing(f"no watermark for {consumer_id!r}") from None
        mark = wm.decode_watermark(data)
        client = cls(
            store,
            namespace,
            consumer_id,
            rank_spec,
            cursor=Cursor(version=mark.version, step=mark.step),
            **kwargs,
        )
        latest = mf.latest(store, namespace)
        if latest is not None and mark.step < latest.trim_floor:
            raise StepReclaimed(
                f"watermark step {mark.step} below trim floor {latest.trim_floor}"
            )
        return client
