"""Crash-injection swarm: many producers, random interleaving, kill points.

Drives real ProducerClients against one in-memory store on a simulated clock.
Producers die with some probability at three points per commit:

  1. right after staging a batch object, before any commit attempt
  2. mid-commit, before the conditional put lands (commit never happened)
  3. mid-commit, after the put landed but before the client records success

A killed producer is abandoned wherever it stood and replaced via open() with
the same producer_id. Payload bytes intentionally differ per incarnation: the
exactly-once property is about (producer_id, producer_seq) identity, and an
adopted object keeps the first incarnation's bytes.
"""

import random
from dataclasses import dataclass, field

from batchplane import manifest as mf
from batchplane.dac import DacParams
from batchplane.producer import ProducerClient
from batchplane.store import MemoryStore
from batchplane.tgb import MeshSpec

from conftest import FakeClock


class InjectedCrash(Exception):
    """Simulated process death; never caught by the client under test."""


class CrashyStore:
    """Kills commits around the conditional put with per-point probability."""

    def __init__(self, inner, rng, kill_probability):
        self.inner = inner
        self.rng = rng
        self.p = kill_probability

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def put_if_absent(self, key, data):
        if "/manifest/" in key:
            roll = self.rng.random()
            if roll < self.p:
                raise InjectedCrash("died before the conditional put")
            out = self.inner.put_if_absent(key, data)
            if roll < 2 * self.p:
                raise InjectedCrash("died after the conditional put")
            return out
        return self.inner.put_if_absent(key, data)


@dataclass
class SwarmResult:
    store: MemoryStore
    final: mf.Manifest
    crashes: int
    namespace: str
    manifest_versions: list = field(default_factory=list)


def run_crashy_swarm(
    n_producers=16,
    tgbs_each=50,
    seed=0,
    kill_probability=0.05,
    namespace="swarm",
    payload_bytes=24,
):
    raw = MemoryStore()
    rng = random.Random(seed)
    store = CrashyStore(raw, rng, kill_probability)
    clock = FakeClock()
    mesh = MeshSpec(1, 1)
    params = DacParams(rho=0.0)

    incarnation = {i: 0 for i in range(n_producers)}
    crashes = 0

    def spawn(i):
        return ProducerClient.open(
            store,
            namespace,
            f"p{i:02d}",
            params=params,
            clock=clock,
            sleep=clock.sleep,
            rng=random.Random(f"{seed}:{i}:{incarnation[i]}"),
        )

    producers = {i: spawn(i) for i in range(n_producers)}

    def payload(i, seq):
        tag = f"p{i:02d}/{seq}/inc{incarnation[i]}".encode()
        return tag + b"#" * max(0, payload_bytes - len(tag))

    def respawn(i):
        nonlocal crashes
        crashes += 1
        incarnation[i] += 1
        producers[i] = spawn(i)

    def done(i):
        c = producers[i]
        return c.next_seq >= tgbs_each and not c.pending

    live = set(range(n_producers))
    while live:
        i = rng.choice(sorted(live))
        client = producers[i]
        try:
            if client.next_seq < tgbs_each:
                client.write_tgb([[payload(i, client.next_seq)]], mesh)
                if rng.random() < kill_probability:
                    raise InjectedCrash("died after staging data")
                # commit opportunistically about every few batches
                if rng.random() < 0.4:
                    client.tick()
            else:
                client.tick()
        except InjectedCrash:
            respawn(i)
        clock.advance(rng.uniform(0.0, 0.01))
        if done(i):
            live.discard(i)

    final = mf.latest(raw, namespace)
    versions = []
    prefix = f"{namespace}/manifest/"
    for key in raw.list(prefix):
        versions.append(int(key[len(prefix):].split(".")[0]))
    return SwarmResult(
        store=raw,
        final=final,
        crashes=crashes,
        namespace=namespace,
        manifest_versions=sorted(versions),
    )


def census(result: SwarmResult):
    """(identity set, step list, per-producer offsets along the version chain)."""
    identities = [(d.producer_id, d.producer_seq) for d in result.final.tgb_list]
    steps = [d.step_index for d in result.final.tgb_list]
    offsets_by_version = []
    for v in result.manifest_versions:
        m = mf.decode_manifest(result.store.get(mf.manifest_key(result.namespace, v)))
        offsets_by_version.append(
            {pid: s.committed_offset for pid, s in m.producer_states.items()}
        )
    return identities, steps, offsets_by_version
