"""Producer client: staging, pacing gate, recovery, exactly-once."""

import random

import pytest

from batchplane import manifest as mf
from batchplane.dac import DacParams
from batchplane.errors import DeadlineExceeded, LagExceeded
from batchplane.producer import ProducerClient
from batchplane.store import MemoryStore
from batchplane.tgb import MeshSpec, tgb_key

from conftest import FakeClock
from harness import census, run_crashy_swarm

MESH = MeshSpec(1, 1)


def make_client(store=None, ns="ns", pid="p0", **kwargs):
    clock = kwargs.pop("clock", FakeClock())
    return (
        ProducerClient.open(
            store if store is not None else MemoryStore(),
            ns,
            pid,
            params=kwargs.pop("params", DacParams(rho=0.0)),
            clock=clock,
            sleep=clock.sleep,
            rng=random.Random(0),
            **kwargs,
        ),
        clock,
    )


def test_open_fresh_namespace():
    client, _ = make_client()
    assert client.next_seq == 0
    assert client.pending == []


def test_write_tgb_stages_object():
    store = MemoryStore()
    client, _ = make_client(store)
    seq = client.write_tgb([[b"payload"]], MESH)
    assert seq == 0
    assert store.exists(tgb_key("ns", "p0", 0))
    assert [d.producer_seq for d in client.pending] == [0]
    assert client.next_seq == 1


def test_max_lag_nonblocking():
    client, _ = make_client(max_lag=2)
    client.write_tgb([[b"a"]], MESH)
    client.write_tgb([[b"b"]], MESH)
    with pytest.raises(LagExceeded):
        client.write_tgb([[b"c"]], MESH)
    # committing clears the lag
    client.tick()
    assert client.write_tgb([[b"c"]], MESH) == 2


def test_tick_commits_pending():
    store = MemoryStore()
    client, _ = make_client(store)
    for i in range(3):
        client.write_tgb([[bytes([i])]], MESH)
    report = client.tick()
    assert report.attempted and report.committed and report.appended == 3
    assert client.pending == []
    m = mf.latest(store, "ns")
    assert [d.step_index for d in m.tgb_list] == [0, 1, 2]
    assert m.committed_offset("p0") == 2


def test_tick_skips_when_gap_not_elapsed():
    client, clock = make_client()
    client.write_tgb([[b"x"]], MESH)
    client.tick()
    client.dac.gap = 10.0  # pretend the controller demanded a wide gap
    client.dac.t_last = clock()
    client.write_tgb([[b"y"]], MESH)
    assert client.tick().attempted is False
    clock.advance(10.1)
    assert client.tick().attempted is True


def test_tick_noop_with_empty_pending():
    store = MemoryStore()
    client, _ = make_client(store)
    assert client.tick().attempted is False
    assert mf.latest(store, "ns") is None  # no empty manifest versions


def test_gap_law_between_attempts():
    # successive attempt starts are separated by at least the recomputed gap
    store = MemoryStore()
    client, clock = make_client(store)
    starts = []

    original = client._attempt

    def spying_attempt():
        starts.append(clock())
        return original()

    client._attempt = spying_attempt
    gaps_before = []
    for i in range(6):
        client.write_tgb([[bytes([i])]], MESH)
        gaps_before.append(client.dac.gap)
        while not client.tick().attempted:
            clock.advance(0.05)
    for (s0, s1), gap in zip(zip(starts, starts[1:]), gaps_before[1:]):
        assert s1 - s0 >= gap - 1e-9


def test_many_writes_then_commit_drains():
    store = MemoryStore()
    client, _ = make_client(store)
    for i in range(50):
        client.write_tgb([[bytes([i])]], MESH)
    client.tick()
    assert client.pending == []
    m = mf.latest(store, "ns")
    assert len(m.tgb_list) == 50
    assert [d.producer_seq for d in m.tgb_list] == list(range(50))


def test_two_producers_conflict_then_rebase():
    store = MemoryStore()
    a, _ = make_client(store, pid="a")
    b, _ = make_client(store, pid="b")
    a.write_tgb([[b"a0"]], MESH)
    b.write_tgb([[b"b0"]], MESH)
    assert a.tick().committed
    report = b.tick()  # b's base is stale; commit conflicts, b rebases
    if not report.committed:
        report = b.tick()
        assert report.committed
    m = mf.latest(store, "ns")
    assert {(d.producer_id, d.producer_seq) for d in m.tgb_list} == {("a", 0), ("b", 0)}
    assert [d.step_index for d in m.tgb_list] == [0, 1]


def test_recovery_resumes_after_committed_offset():
    store = MemoryStore()
    client, _ = make_client(store)
    for i in range(42):
        client.write_tgb([[bytes([i % 250])]], MESH)
    client.tick()
    del client  # crash after commit
    revived, _ = make_client(store)
    assert revived.next_seq == 42
    assert revived.pending == []


def test_recovery_adopts_staged_objects():
    store = MemoryStore()
    client, _ = make_client(store)
    client.write_tgb([[b"committed"]], MESH)
    client.tick()
    client.write_tgb([[b"staged-1"]], MESH)
    client.write_tgb([[b"staged-2"]], MESH)
    del client  # crash with two staged, uncommitted batches
    revived, _ = make_client(store)
    assert [d.producer_seq for d in revived.pending] == [1, 2]
    assert revived.next_seq == 3
    revived.tick()
    m = mf.latest(store, "ns")
    assert [(d.producer_id, d.producer_seq) for d in m.tgb_list] == [
        ("p0", 0),
        ("p0", 1),
        ("p0", 2),
    ]


def test_shared_producer_id_stays_exactly_once():
    # two live incarnations of one producer id race; the conditional write
    # serializes offset advancement and the census stays exactly-once
    store = MemoryStore()
    first, _ = make_client(store)
    second, _ = make_client(store)  # failover replacement while first lives
    s1 = first.write_tgb([[b"from-first"]], MESH)
    s2 = second.write_tgb([[b"from-second"]], MESH)
    assert s1 == s2 == 0  # same name; first writer's bytes win
    first.tick()
    second.tick()
    m = mf.latest(store, "ns")
    assert [(d.producer_id, d.producer_seq) for d in m.tgb_list] == [("p0", 0)]
    assert store.get(tgb_key("ns", "p0", 0)).startswith(b"from-first")


def test_finalize_drains():
    store = MemoryStore()
    client, _ = make_client(store)
    for i in range(5):
        client.write_tgb([[bytes([i])]], MESH)
    client.finalize()
    assert client.pending == []
    assert len(mf.latest(store, "ns").tgb_list) == 5


def test_finalize_deadline_zero():
    store = MemoryStore()
    client, clock = make_client(store)
    clock.advance(1.0)
    client.write_tgb([[b"x"]], MESH)
    with pytest.raises(DeadlineExceeded):
        client.finalize(deadline=0.0)
    assert mf.latest(store, "ns") is None  # census unchanged, nothing visible
    # staged object survives for the next incarnation
    revived, _ = make_client(store)
    assert [d.producer_seq for d in revived.pending] == [0]


def test_crashy_swarm_small_smoke():
    result = run_crashy_swarm(n_producers=4, tgbs_each=10, seed=1)
    identities, steps, offsets = census(result)
    assert len(identities) == 40
    assert len(set(identities)) == 40
    assert steps == list(range(40))
    for pid in {p for p, _ in identities}:
        seen = [o.get(pid, -1) for o in offsets]
        assert all(a <= b for a, b in zip(seen, seen[1:]))
