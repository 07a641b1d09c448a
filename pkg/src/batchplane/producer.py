"""Producer client: stages batches as objects, publishes them through the
adaptive commit loop, and recovers exactly-once from crashes.

The client is a cooperatively driven state machine: callers invoke tick() on
whatever cadence they like and the client decides internally whether the gap
has elapsed. All pacing uses an injected monotonic clock so tests can run on
simulated time. Crash safety comes from ordering: local state advances only
after the corresponding store operation is known to have completed, and
recovery re-derives everything else from the store.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import manifest as mf
from . import watermarks as wm
from .dac import DacParams, DacState
from .errors import DeadlineExceeded, LagExceeded, NotFound, TransientIo
from .store import ObjectStore, PutOutcome
from .tgb import MeshSpec, decode_footer, encode_tgb, read_footer, tgb_key, TRAILER_SIZE


@dataclass
class TickReport:
    attempted: bool
    committed: bool = False
    version: int | None = None
    new_gap: float = 0.0
    tau_obs: float = 0.0
    appended: int = 0


def _adopt_descriptor(
    store: ObjectStore, key: str, producer_id: str, producer_seq: int
) -> mf.TgbDescriptor | None:
    """Rebuild a descriptor from a staged object's own trailer.

    Returns None if the object is structurally inconsistent (cannot happen
    with an atomic store, but recovery refuses to republish garbage).
    """
    try:
        total = store.size(key)
        footer, _ = read_footer(store, key, total)
    except Exception:
        return None
    expected = footer.total_body_bytes() + 8 + 16 * footer.mesh.slots + TRAILER_SIZE
    if expected != total:
        return None
    return mf.TgbDescriptor(
        step_index=-1,  # assigned at commit
        object_keys=(key,),
        mesh=footer.mesh,
        total_bytes=total,
        producer_id=producer_id,
        producer_seq=producer_seq,
    )


class ProducerClient:
    """One producer actor. Not shareable across threads.

    Many clients (same or different processes, even sharing a producer_id
    after a failover race) interact only through the store; the conditional
    write keeps the committed history exactly-once regardless.
    """

    def __init__(
        self,
        store: ObjectStore,
        namespace: str,
        producer_id: str,
        params: DacParams | None = None,
        max_lag: int | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.store = store
        self.namespace = namespace
        self.producer_id = producer_id
        self.params = params or DacParams()
        self.max_lag = max_lag
        self.clock = clock
        self.sleep = sleep
        self.rng = rng or random.Random()
        self.next_seq = 0
        self.pending: list[mf.TgbDescriptor] = []
        self.dac = DacState()
        self.base = mf.EMPTY  # last manifest this producer has seen
        self._watermark_step: int | None = None  # latest observed trim candidate

    # -- construction / recovery ----------------------------------------

    @classmethod
    def open(
        cls,
        store: ObjectStore,
        namespace: str,
        producer_id: str,
        params: DacParams | None = None,
        max_lag: int | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ) -> "ProducerClient":
        """Recover persisted state for producer_id and resume after it.

        next_seq continues past the committed offset in the latest manifest.
        Staged-but-uncommitted objects from a previous incarnation are
        re-adopted when byte-complete; anything unusable past the consecutive
        prefix is deleted so the caller's re-produced data can take the name.
        """
        client = cls(store, namespace, producer_id, params, max_lag, clock, sleep, rng)
        latest = mf.latest(store, namespace)
        if latest is not None:
            client.base = latest
            client.dac.n_producers = max(1, len(latest.producer_states))
        committed = client.base.committed_offset(producer_id)
        client.next_seq = committed + 1

        staged = cls._staged_seqs(store, namespace, producer_id)
        expect = committed + 1
        for seq in staged:
            if seq <= committed:
                continue  # already visible; object stays referenced by the manifest
            key = tgb_key(namespace, producer_id, seq)
            desc = _adopt_descriptor(store, key, producer_id, seq) if seq == expect else None
            if desc is None:
                # gap or damaged object: everything from here on is re-produced
                store.delete(key)
                continue
            client.pending.append(desc)
            client.next_seq = seq + 1
            expect = seq + 1
        client._refresh_watermark_view()
        return client

    @staticmethod
    def _staged_seqs(store: ObjectStore, namespace: str, producer_id: str) -> list[int]:
        prefix = f"{namespace}/data/{producer_id}/"
        seqs = []
        for key in store.list(prefix):
            name = key[len(prefix):]
            if name.endswith(".tgb"):
                try:
                    seqs.append(int(name[: -len(".tgb")]))
                except ValueError:
                    continue
        return sorted(seqs)

    # -- data path -------------------------------------------------------

    def unacknowledged(self) -> int:
        """Batches this producer is ahead of the global watermark: pending
        plus committed ones no checkpoint covers yet. Counts only pending
        until a watermark has been observed."""
        count = len(self.pending)
        if self._watermark_step is not None:
            for d in self.base.tgb_list:
                if d.producer_id == self.producer_id and d.step_index >= self._watermark_step:
                    count += 1
        return count

    def write_tgb(
        self,
        slices: Sequence[Sequence[bytes]],
        mesh: MeshSpec,
        block: bool = False,
        poll: float = 0.05,
    ) -> int:
        """Materialize one batch at its deterministic key and stage it.

        No coordination: concurrent producers write disjoint keys. If another
        incarnation sharing this producer_id staged the same sequence first,
        the existing object wins (immutability) and is adopted as-is.
        """
        if self.max_lag is not None:
            while self.unacknowledged() >= self.max_lag:
                if not block:
                    raise LagExceeded(
                        f"{self.unacknowledged()} unacknowledged batches at max_lag={self.max_lag}"
                    )
                self.tick()
                self._refresh_watermark_view()
                self.sleep(poll)
        seq = self.next_seq
        key = tgb_key(self.namespace, self.producer_id, seq)
        blob = encode_tgb(slices, mesh)
        outcome = self.store.put_if_absent(key, blob)
        if outcome is PutOutcome.CREATED:
            desc = mf.TgbDescriptor(
                step_index=-1,
                object_keys=(key,),
                mesh=mesh,
                total_bytes=len(blob),
                producer_id=self.producer_id,
                producer_seq=seq,
            )
        else:
            # another incarnation won the name; its bytes are the truth
            desc = _adopt_descriptor(self.store, key, self.producer_id, seq)
            if desc is None:
                raise TransientIo(f"staged object {key!r} exists but is unreadable")
        self.pending.append(desc)
        self.next_seq = seq + 1
        return seq

    # -- commit loop -------------------------------------------------------

    def tick(self, now: float | None = None) -> TickReport:
        """One pass of the commit loop: attempt iff the gap elapsed and there
        is something to publish. The fragile window is measured around the
        whole read-build-put sequence and folded into the EMA regardless of
        outcome; the gap is then recomputed from the closed forms."""
        if now is None:
            now = self.clock()
        if not self.pending or (now - self.dac.t_last) < self.dac.gap:
            return TickReport(attempted=False, new_gap=self.dac.gap)
        return self._attempt()

    def _attempt(self) -> TickReport:
        t0 = self.clock()
        self._refresh_base()
        candidate, appended = mf.rebase(self.base, self.pending, self.producer_id)
        if not appended:
            # everything already visible (ambiguous earlier attempt resolved
            # as success, or a twin incarnation committed it)
            self.pending.clear()
            end = self.clock()
            self._after_attempt(end, end - t0, committed=False)
            return TickReport(
                attempted=True, committed=True, version=self.base.version,
                new_gap=self.dac.gap, tau_obs=end - t0, appended=0,
            )
        outcome = mf.commit_resolved(self.store, self.namespace, candidate)
        end = self.clock()
        tau_obs = end - t0
        if outcome.committed:
            self.base = candidate
            self.pending.clear()
            self._after_attempt(end, tau_obs, committed=True)
            return TickReport(
                attempted=True, committed=True, version=outcome.version,
                new_gap=self.dac.gap, tau_obs=tau_obs, appended=len(appended),
            )
        # conflict: adopt the winner, drop anything it already carries
        winner = mf.latest(self.store, self.namespace)
        if winner is not None:
            self.pending = mf.filter_uncommitted(winner, self.pending, self.producer_id)
            self.base = winner
        self._after_attempt(end, tau_obs, committed=False)
        self._refresh_watermark_view()
        return TickReport(
            attempted=True, committed=False, new_gap=self.dac.gap,
            tau_obs=tau_obs, appended=0,
        )

    def _after_attempt(self, now: float, tau_obs: float, committed: bool) -> None:
        self.dac.observe(tau_obs, self.params)
        self.dac.n_producers = max(1, len(self.base.producer_states))
        self.dac.recompute_gap(self.params, self.rng.random())
        self.dac.t_last = now

    def _refresh_base(self) -> None:
        """Move the local view forward if newer manifests exist. One probe in
        the common case; when behind, walk names first and decode only the
        newest manifest (intermediate versions carry nothing we need)."""
        newest = self.base.version
        while self.store.exists(mf.manifest_key(self.namespace, newest + 1)):
            newest += 1
        if newest == self.base.version:
            return
        try:
            data = self.store.get(mf.manifest_key(self.namespace, newest))
        except NotFound:
            return  # raced a reclaim; next attempt rediscovers via latest()
        m = mf.decode_manifest(data)
        self.base = m
        self.pending = mf.filter_uncommitted(m, self.pending, self.producer_id)

    def _refresh_watermark_view(self) -> None:
        marks = wm.read_all(self.store, self.namespace)
        if marks:
            self._watermark_step = min(w.step for w in marks)

    # -- shutdown ---------------------------------------------------------

    def finalize(self, deadline: float | None = None) -> None:
        """Drain remaining staged batches before exiting.

        Gap gating relaxes to the duty bound alone (freshness no longer
        matters, wasted time still does). On deadline the staged objects stay
        put for the next incarnation to adopt; nothing becomes visible twice.
        """
        from .dac import t_cost  # local import keeps module top tidy

        while self.pending:
            now = self.clock()
            if deadline is not None and now >= deadline:
                raise DeadlineExceeded(f"{len(self.pending)} batches still staged")
            wait = 0.0
            if self.dac.tau_hat is not None:
                floor = t_cost(self.dac.tau_hat, self.params.delta)
                wait = (self.dac.t_last + floor) - now
            if wait > 0:
                if deadline is not None and now + wait > deadline:
                    raise DeadlineExceeded(f"{len(self.pending)} batches still staged")
                self.sleep(wait)
            self._attempt()
