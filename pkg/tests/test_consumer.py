"""Consumer client: projection, deterministic reads, checkpoints, remapping."""

import itertools
import random

import pytest

from batchplane.consumer import ConsumerClient, Cursor, RankSpec, project, remap
from batchplane.dac import DacParams
from batchplane.errors import (
    InvalidTopology,
    StepReclaimed,
    UnsupportedRemap,
    WatermarkMissing,
)
from batchplane.producer import ProducerClient
from batchplane.store import MemoryStore
from batchplane.tgb import MeshSpec

from conftest import FakeClock
from oracles import mesh_unfold_ref, slice_offsets_ref


def publish(store, ns, tgbs, mesh):
    """Commit a list of slice matrices as one producer, one TGB per entry."""
    clock = FakeClock()
    producer = ProducerClient.open(
        store, ns, "pub", params=DacParams(rho=0.0), clock=clock, sleep=clock.sleep,
        rng=random.Random(0),
    )
    for slices in tgbs:
        producer.write_tgb(slices, mesh)
    producer.finalize()
    return producer


def group_payload(t, d, c, size=8):
    tag = f"t{t}d{d}c{c}".encode()
    return tag + b"." * max(0, size - len(tag))


def make_tgbs(count, mesh, size=8):
    return [
        [[group_payload(t, d, c, size) for c in range(mesh.cp)] for d in range(mesh.dp)]
        for t in range(count)
    ]


def consumer_for(store, ns, rank, spec_kw, **kw):
    spec = RankSpec(rank=rank, **spec_kw)
    return ConsumerClient(store, ns, f"c{rank}", spec, clock=FakeClock(), **kw)


# --- projection ---


def test_project_canonical_16_rank_example():
    spec_kw = dict(world_size=16, dp=2, cp=2, tp=2, pp=2)
    assert project(RankSpec(rank=0, **spec_kw)) == (0, 0)
    coords = [project(RankSpec(rank=r, **spec_kw)) for r in range(16)]
    # 16 ranks resolve exactly 4 distinct slices, 4 ranks each
    assert len(set(coords)) == 4
    for pair in set(coords):
        assert coords.count(pair) == 4


def test_project_matches_mesh_unfolding_oracle():
    rng = random.Random(9)
    for _ in range(40):
        dp, cp, tp, pp = (rng.randint(1, 4) for _ in range(4))
        world = dp * cp * tp * pp
        expected = mesh_unfold_ref(dp, cp, tp, pp)
        for rank in range(world):
            spec = RankSpec(rank=rank, world_size=world, dp=dp, cp=cp, tp=tp, pp=pp)
            assert project(spec) == expected[rank]


def test_invalid_topology():
    with pytest.raises(InvalidTopology):
        RankSpec(rank=0, world_size=5, dp=2, cp=2)
    with pytest.raises(InvalidTopology):
        RankSpec(rank=4, world_size=4, dp=2, cp=2)
    with pytest.raises(InvalidTopology):
        RankSpec(rank=0, world_size=0, dp=0, cp=1)


# --- next_batch ---


def test_single_rank_reads_full_body():
    store = MemoryStore()
    mesh = MeshSpec(1, 1)
    publish(store, "ns", [[[b"whole-batch"]]], mesh)
    client = consumer_for(store, "ns", 0, dict(world_size=1, dp=1, cp=1))
    data, cursor = client.next_batch()
    assert data == b"whole-batch"
    assert cursor == Cursor(version=0, step=1)


def test_dp_replicas_read_disjoint_ranges():
    store = MemoryStore()
    mesh = MeshSpec(2, 1)
    sizes = [5, 9]
    slices = [[b"A" * sizes[0]], [b"B" * sizes[1]]]
    publish(store, "ns", [slices], mesh)
    offsets, _total = slice_offsets_ref(sizes)
    spec_kw = dict(world_size=2, dp=2, cp=1)
    got = {}
    for rank in range(2):
        client = consumer_for(store, "ns", rank, spec_kw)
        data, _ = client.next_batch()
        got[rank] = data
    assert got[0] == b"A" * 5 and got[1] == b"B" * 9
    assert offsets == [0, 5]  # frozen from the cumulative-sum oracle


def test_not_yet_available_then_resumes():
    store = MemoryStore()
    mesh = MeshSpec(1, 1)
    producer = publish(store, "ns", [[[b"first"]]], mesh)
    client = consumer_for(store, "ns", 0, dict(world_size=1, dp=1, cp=1))
    assert client.next_batch()[0] == b"first"
    assert client.next_batch() is None  # nothing new committed: normal, not an error
    producer.write_tgb([[b"second"]], mesh)
    producer.finalize()
    assert client.next_batch()[0] == b"second"


def test_stream_is_deterministic_for_fixed_manifests():
    store = MemoryStore()
    mesh = MeshSpec(2, 2)
    publish(store, "ns", make_tgbs(6, mesh), mesh)
    spec_kw = dict(world_size=8, dp=2, cp=2, tp=2, pp=1)
    streams = []
    for _attempt in range(2):
        client = consumer_for(store, "ns", 5, spec_kw)
        out = []
        while (item := client.next_batch()) is not None:
            out.append(item[0])
        streams.append(out)
    assert streams[0] == streams[1]
    assert len(streams[0]) == 6


def test_same_coordinate_ranks_read_identical_bytes():
    store = MemoryStore()
    mesh = MeshSpec(2, 2)
    publish(store, "ns", make_tgbs(3, mesh), mesh)
    spec_kw = dict(world_size=16, dp=2, cp=2, tp=2, pp=2)
    by_coord = {}
    for rank in range(16):
        client = consumer_for(store, "ns", rank, spec_kw)
        stream = []
        while (item := client.next_batch()) is not None:
            stream.append(item[0])
        coord = project(RankSpec(rank=rank, **spec_kw))
        by_coord.setdefault(coord, []).append(stream)
    for streams in by_coord.values():
        assert all(s == streams[0] for s in streams)
    flat = {tuple(s[0]) for s in by_coord.values()}
    assert len(flat) == 4  # distinct coordinates decode distinct payloads


def test_prefetch_is_invisible():
    store = MemoryStore()
    mesh = MeshSpec(2, 1)
    publish(store, "ns", make_tgbs(8, mesh), mesh)
    spec_kw = dict(world_size=2, dp=2, cp=1)
    plain = consumer_for(store, "ns", 1, spec_kw, prefetch_depth=0)
    eager = consumer_for(store, "ns", 1, spec_kw, prefetch_depth=4)
    a, b = [], []
    while (item := plain.next_batch()) is not None:
        a.append(item[0])
    while (item := eager.next_batch()) is not None:
        b.append(item[0])
    assert a == b


# --- checkpoint / restore ---

GOLDEN_WATERMARK = b'{"consumer_id":"c0","step":12,"version":7}'


def test_checkpoint_golden_bytes():
    from batchplane.watermarks import Watermark, encode_watermark

    assert encode_watermark(Watermark("c0", 7, 12)) == GOLDEN_WATERMARK


def test_checkpoint_roundtrip_and_idempotence():
    store = MemoryStore()
    mesh = MeshSpec(1, 1)
    publish(store, "ns", make_tgbs(5, mesh), mesh)
    client = consumer_for(store, "ns", 0, dict(world_size=1, dp=1, cp=1))
    for _ in range(3):
        client.next_batch()
    mark = client.checkpoint()
    assert (mark.version, mark.step) == (0, 3)
    raw = store.get("ns/watermarks/c0.wm")
    assert client.checkpoint() is not None
    assert store.get("ns/watermarks/c0.wm") == raw  # no progress, same bytes


def test_restore_replays_identical_stream():
    store = MemoryStore()
    mesh = MeshSpec(2, 1)
    publish(store, "ns", make_tgbs(10, mesh), mesh)
    spec_kw = dict(world_size=2, dp=2, cp=1)
    client = consumer_for(store, "ns", 1, spec_kw)
    seen = [client.next_batch()[0] for _ in range(4)]
    client.checkpoint()
    rest_of_run = []
    while (item := client.next_batch()) is not None:
        rest_of_run.append(item[0])

    spec = RankSpec(rank=1, **spec_kw)
    revived = ConsumerClient.restore(store, "ns", "c1", spec, clock=FakeClock())
    replay = []
    while (item := revived.next_batch()) is not None:
        replay.append(item[0])
    assert replay == rest_of_run  # no gap, no duplicate
    assert seen + replay == seen + rest_of_run


def test_restore_missing_watermark():
    with pytest.raises(WatermarkMissing):
        ConsumerClient.restore(
            MemoryStore(), "ns", "ghost", RankSpec(rank=0, world_size=1, dp=1, cp=1)
        )


# --- remap ---


def run_plan(store, ns, plan, spec_kw, logical_steps):
    """Collect {logical step: {(rank): payload}} by executing a plan manually."""
    from batchplane import manifest as mf
    from batchplane.tgb import read_footer, slice_range

    m = mf.latest(store, ns)
    out = {}
    for step in range(logical_steps):
        per_rank = {}
        for rank in range(spec_kw["world_size"]):
            spec = RankSpec(rank=rank, **spec_kw)
            t, d, c = plan.read_for(step, spec)
            desc = m.descriptor_at(t)
            footer, _ = read_footer(store, desc.object_keys[0], desc.total_bytes, desc.mesh)
            off, length = slice_range(footer, d, c)
            per_rank[rank] = store.get_range(desc.object_keys[0], off, length)
        out[step] = per_rank
    return out


def test_remap_tp_pp_only_is_identity():
    store = MemoryStore()
    mesh = MeshSpec(2, 2)
    publish(store, "ns", make_tgbs(4, mesh), mesh)
    old_kw = dict(world_size=16, dp=2, cp=2, tp=2, pp=2)
    new_kw = dict(world_size=32, dp=2, cp=2, tp=4, pp=2)
    plan = remap(
        RankSpec(rank=0, **old_kw), RankSpec(rank=0, **new_kw), Cursor(version=0, step=0)
    )
    assert plan.batches_per_step == 1 and plan.steps_per_batch == 1
    reads = run_plan(store, "ns", plan, new_kw, 4)
    # byte-identical to direct consumption under the new spec per coordinate
    for step in range(4):
        for rank in range(32):
            spec = RankSpec(rank=rank, **new_kw)
            d, c = project(spec)
            assert reads[step][rank] == group_payload(step, d, c)


def test_remap_dp_doubling_pairs_batches():
    store = MemoryStore()
    mesh = MeshSpec(2, 1)
    publish(store, "ns", make_tgbs(4, mesh), mesh)
    old_kw = dict(world_size=2, dp=2, cp=1)
    new_kw = dict(world_size=4, dp=4, cp=1)
    plan = remap(
        RankSpec(rank=0, **old_kw), RankSpec(rank=0, **new_kw), Cursor(version=0, step=0)
    )
    reads = run_plan(store, "ns", plan, new_kw, 2)
    # union of samples per logical step equals the union of the old step pair
    for ell, pair in [(0, (0, 1)), (1, (2, 3))]:
        got = set(reads[ell].values())
        expected = {group_payload(t, d, 0) for t in pair for d in range(2)}
        assert got == expected


def test_remap_dp_halving_preserves_global_order():
    store = MemoryStore()
    mesh = MeshSpec(2, 1)
    publish(store, "ns", make_tgbs(3, mesh), mesh)
    old_kw = dict(world_size=2, dp=2, cp=1)
    new_kw = dict(world_size=1, dp=1, cp=1)
    plan = remap(
        RankSpec(rank=0, **old_kw), RankSpec(rank=0, **new_kw), Cursor(version=0, step=0)
    )
    reads = run_plan(store, "ns", plan, new_kw, 6)
    stream = [reads[ell][0] for ell in range(6)]
    # concatenated per-replica stream preserves the original global order
    expected = [group_payload(t, d, 0) for t in range(3) for d in range(2)]
    assert stream == expected


def test_remap_cp_halving():
    store = MemoryStore()
    mesh = MeshSpec(1, 2)
    publish(store, "ns", make_tgbs(2, mesh), mesh)
    old_kw = dict(world_size=2, dp=1, cp=2)
    new_kw = dict(world_size=1, dp=1, cp=1)
    plan = remap(
        RankSpec(rank=0, **old_kw), RankSpec(rank=0, **new_kw), Cursor(version=0, step=0)
    )
    reads = run_plan(store, "ns", plan, new_kw, 4)
    stream = [reads[ell][0] for ell in range(4)]
    expected = [group_payload(t, 0, c) for t in range(2) for c in range(2)]
    assert stream == expected


def test_remap_rejects_non_power_of_two():
    old = RankSpec(rank=0, world_size=2, dp=2, cp=1)
    new = RankSpec(rank=0, world_size=3, dp=3, cp=1)
    with pytest.raises(UnsupportedRemap):
        remap(old, new, Cursor(version=0, step=0))
    with pytest.raises(UnsupportedRemap):
        remap(
            RankSpec(rank=0, world_size=6, dp=6, cp=1),
            RankSpec(rank=0, world_size=2, dp=2, cp=1),
            Cursor(version=0, step=0),
        )


def test_remap_conservation_random_meshes():
    # every group consumed exactly once over any window of logical steps
    rng = random.Random(11)
    for _ in range(20):
        old_dp, old_cp = rng.choice([1, 2, 4]), rng.choice([1, 2, 4])
        new_dp = old_dp * rng.choice([1, 2, 4]) if rng.random() < 0.5 else max(1, old_dp // rng.choice([1, 2, 4]))
        new_cp = old_cp * rng.choice([1, 2]) if rng.random() < 0.5 else max(1, old_cp // rng.choice([1, 2]))
        old = RankSpec(rank=0, world_size=old_dp * old_cp, dp=old_dp, cp=old_cp)
        new = RankSpec(rank=0, world_size=new_dp * new_cp, dp=new_dp, cp=new_cp)
        plan = remap(old, new, Cursor(version=0, step=0))
        tgb_window = 4 * plan.batches_per_step
        logical_steps = tgb_window * plan.steps_per_batch // plan.batches_per_step
        consumed = []
        for ell in range(logical_steps):
            for rank in range(new.world_size):
                spec = RankSpec(rank=rank, world_size=new.world_size, dp=new_dp, cp=new_cp)
                consumed.append(plan.read_for(ell, spec))
        expected = {
            (t, d, c)
            for t in range(tgb_window)
            for d in range(old_dp)
            for c in range(old_cp)
        }
        assert set(consumed) == expected
        assert len(consumed) == len(expected)  # one read per group, no overlap
