"""Operator CLI: inspect namespaces, run synthetic producers/consumers,
trigger reclamation, and drive the simulator.

Structured JSON records go to stdout (one per line, pipeable); the human
summary goes to stderr. Exit codes: 0 ok, 1 protocol/invariant violation,
2 usage error, 3 transient I/O exhaustion.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import statistics
import sys
import threading
import time

from . import manifest as mf
from .consumer import ConsumerClient, RankSpec
from .dac import DacParams
from .distributions import Distribution
from .errors import BatchPlaneError, TransientIo
from .lifecycle import reclaim, storage_census
from .producer import ProducerClient
from .sim import (
    PolicySpec,
    SimConfig,
    TauModel,
    run_ablation,
    simulate,
    validate_model,
)
from .store import FaultProfile, FilesystemStore, MemoryStore
from .tgb import MeshSpec


def emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")


def note(text: str) -> None:
    sys.stderr.write(text + "\n")


def usage_error(message: str) -> SystemExit:
    note(f"usage error: {message}")
    return SystemExit(2)


def make_store(selector: str, put_latency: str | None = None):
    if selector == "memory":
        fault = None
        if put_latency:
            fault = FaultProfile(put_latency=Distribution.parse(put_latency))
        return MemoryStore(fault=fault)
    if selector.startswith("fs:"):
        return FilesystemStore(selector[3:])
    raise usage_error(f"unsupported store selector {selector!r} (use memory or fs:PATH)")


def percentile(samples: list[float], q: float) -> float:
    if not samples:
        return 0.0
    ordered = sorted(samples)
    idx = min(len(ordered) - 1, max(0, int(round(q * (len(ordered) - 1)))))
    return ordered[idx]


# ---------------------------------------------------------------------------
# inspect


def cmd_inspect(args) -> int:
    store = make_store(args.store)
    if args.version is not None:
        try:
            current = mf.decode_manifest(
                store.get(mf.manifest_key(args.namespace, args.version))
            )
        except BatchPlaneError:
            note(f"no manifest at version {args.version}")
            return 1
    else:
        current = mf.latest(store, args.namespace)
    if current is None:
        note("no manifest")
        emit({"kind": "inspect", "namespace": args.namespace, "manifest": None})
        return 0
    record = {
        "kind": "inspect",
        "namespace": args.namespace,
        "version": current.version,
        "trim_floor": current.trim_floor,
        "steps": [current.trim_floor, current.next_step()],
        "tgb_count": len(current.tgb_list),
        "producers": {
            pid: {
                "committed_offset": s.committed_offset,
                "last_commit_version": s.last_commit_version,
            }
            for pid, s in sorted(current.producer_states.items())
        },
    }
    emit(record)
    if args.full:
        for d in current.tgb_list:
            emit(
                {
                    "kind": "descriptor",
                    "step_index": d.step_index,
                    "producer_id": d.producer_id,
                    "producer_seq": d.producer_seq,
                    "mesh": {"dp": d.mesh.dp, "cp": d.mesh.cp},
                    "total_bytes": d.total_bytes,
                    "object_keys": list(d.object_keys),
                }
            )
    census = storage_census(store, args.namespace)
    note(
        f"version {current.version}: steps [{current.trim_floor}, "
        f"{current.next_step()}), {len(current.producer_states)} producers, "
        f"{census.total_bytes} bytes on store"
    )
    return 0


# ---------------------------------------------------------------------------
# produce


def _dac_params(args) -> DacParams:
    return DacParams(
        delta=args.delta, epsilon=args.epsilon, alpha=args.alpha, rho=args.rho
    )


def _state_overhead_probe(store, namespace: str, rounds: int, payload: bytes) -> dict:
    """Per-commit latency of real producer-state manifests versus a
    dummy-metadata control, on paired append inputs in twin namespaces."""
    timings = {"with_state": [], "dummy_control": []}
    base_real = mf.EMPTY
    base_ctrl = mf.EMPTY
    mesh = MeshSpec(1, 1)
    for i in range(rounds):
        producer_id = "probe"
        desc = mf.TgbDescriptor(
            step_index=-1,
            object_keys=(f"{namespace}/data/{producer_id}/{i:012d}.tgb",),
            mesh=mesh,
            total_bytes=len(payload),
            producer_id=producer_id,
            producer_seq=i,
        )
        store.put_if_absent(desc.object_keys[0], payload)

        candidate = mf.build_candidate(base_real, [desc], producer_id)
        t0 = time.perf_counter()
        out = mf.try_commit(store, f"{namespace}/with-state", candidate)
        timings["with_state"].append(time.perf_counter() - t0)
        assert out.committed
        base_real = candidate

        control = mf.Manifest(
            version=base_ctrl.version + 1,
            tgb_list=base_ctrl.tgb_list + candidate.tgb_list[-1:],
            producer_states={},  # dummy control: no recovery state carried
            trim_floor=0,
        )
        t0 = time.perf_counter()
        out = mf.try_commit(store, f"{namespace}/dummy-control", control)
        timings["dummy_control"].append(time.perf_counter() - t0)
        assert out.committed
        base_ctrl = control
    mean_state = statistics.fmean(timings["with_state"])
    mean_ctrl = statistics.fmean(timings["dummy_control"])
    return {
        "kind": "state_overhead_probe",
        "rounds": rounds,
        "with_state_mean_s": mean_state,
        "with_state_p50_s": percentile(timings["with_state"], 0.5),
        "with_state_p95_s": percentile(timings["with_state"], 0.95),
        "dummy_control_mean_s": mean_ctrl,
        "dummy_control_p50_s": percentile(timings["dummy_control"], 0.5),
        "dummy_control_p95_s": percentile(timings["dummy_control"], 0.95),
        "overhead_fraction": (mean_state - mean_ctrl) / mean_ctrl if mean_ctrl else 0.0,
    }


def cmd_produce(args) -> int:
    store = make_store(args.store, args.put_latency)
    params = _dac_params(args)
    mesh = MeshSpec(args.dp, args.cp)
    stop_at = time.monotonic() + args.duration
    lock = threading.Lock()
    per_producer = []

    def run_one(i: int) -> None:
        rng = random.Random(f"{args.seed}:{i}")
        client = ProducerClient.open(
            store,
            args.namespace,
            f"producer-{i:03d}",
            params=params,
            max_lag=args.max_lag,
            rng=rng,
        )
        attempts = conflicts = produced = 0
        commit_latencies = []
        while time.monotonic() < stop_at:
            slices = [
                [rng.randbytes(args.payload_size // mesh.slots) for _ in range(mesh.cp)]
                for _ in range(mesh.dp)
            ]
            client.write_tgb(slices, mesh, block=True)
            produced += 1
            report = client.tick()
            if report.attempted:
                attempts += 1
                conflicts += 0 if report.committed else 1
                commit_latencies.append(report.tau_obs)
        try:
            client.finalize(deadline=time.monotonic() + 5.0)
        except BatchPlaneError:
            pass
        with lock:
            per_producer.append(
                {
                    "kind": "producer",
                    "producer_id": client.producer_id,
                    "produced_tgbs": produced,
                    "attempts": attempts,
                    "conflicts": conflicts,
                    "commit_p50_s": percentile(commit_latencies, 0.5),
                    "commit_p95_s": percentile(commit_latencies, 0.95),
                }
            )

    threads = [threading.Thread(target=run_one, args=(i,)) for i in range(args.n_producers)]
    t0 = time.monotonic()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = time.monotonic() - t0

    current = mf.latest(store, args.namespace)
    committed = len(current.tgb_list) if current else 0
    identities = (
        [(d.producer_id, d.producer_seq) for d in current.tgb_list] if current else []
    )
    attempts = sum(p["attempts"] for p in per_producer)
    conflicts = sum(p["conflicts"] for p in per_producer)
    for p in sorted(per_producer, key=lambda r: r["producer_id"]):
        emit(p)
    summary = {
        "kind": "produce_summary",
        "namespace": args.namespace,
        "n_producers": args.n_producers,
        "payload_size": args.payload_size,
        "elapsed_s": elapsed,
        "committed_tgbs": committed,
        "throughput_tgbs_per_s": committed / elapsed if elapsed else 0.0,
        "throughput_bytes_per_s": committed * args.payload_size / elapsed if elapsed else 0.0,
        "attempts": attempts,
        "conflicts": conflicts,
        "conflict_rate": conflicts / attempts if attempts else 0.0,
        "success_rate": 1 - conflicts / attempts if attempts else 0.0,
        "exactly_once": len(set(identities)) == len(identities),
    }
    emit(summary)
    if args.state_probe_rounds > 0:
        probe = _state_overhead_probe(
            store,
            f"{args.namespace}__probe",
            args.state_probe_rounds,
            b"x" * args.payload_size,
        )
        emit(probe)
        note(
            f"state persistence overhead: {probe['overhead_fraction'] * 100:.1f}% "
            f"per commit ({probe['with_state_mean_s'] * 1e6:.0f}us vs "
            f"{probe['dummy_control_mean_s'] * 1e6:.0f}us over {probe['rounds']} pairs)"
        )
    note(
        f"{committed} TGBs committed by {args.n_producers} producers in "
        f"{elapsed:.2f}s ({summary['throughput_tgbs_per_s']:.1f} TGB/s), "
        f"conflict rate {summary['conflict_rate']:.3f}"
    )
    if not summary["exactly_once"]:
        note("INVARIANT VIOLATION: duplicate (producer_id, seq) in manifest")
        return 1
    return 0


# ---------------------------------------------------------------------------
# consume


def cmd_consume(args) -> int:
    store = make_store(args.store)
    rank_env = os.environ.get("RANK")
    world_env = os.environ.get("WORLD_SIZE")
    world_size = args.world_size or (int(world_env) if world_env else None)
    if world_size is None:
        raise usage_error("need --world-size or WORLD_SIZE in the environment")
    if args.all_ranks:
        ranks = list(range(world_size))
    else:
        rank = args.rank if args.rank is not None else (int(rank_env) if rank_env else None)
        if rank is None:
            raise usage_error("need --rank, --all-ranks, or RANK in the environment")
        ranks = [rank]

    stop_at = time.monotonic() + args.duration
    lock = threading.Lock()
    reports = []
    failures = []

    def run_rank(rank: int) -> None:
        try:
            _consume_rank(rank)
        except BatchPlaneError as exc:
            with lock:
                failures.append({"kind": "consumer_error", "rank": rank, "error": str(exc)})

    def _consume_rank(rank: int) -> None:
        spec = RankSpec(
            rank=rank, world_size=world_size, dp=args.dp, cp=args.cp, tp=args.tp, pp=args.pp
        )
        client = ConsumerClient(
            store,
            args.namespace,
            f"rank-{rank:05d}",
            spec,
            poll_interval=args.poll_interval,
            prefetch_depth=args.prefetch_depth,
        )
        latencies = []
        steps = 0
        while time.monotonic() < stop_at:
            t0 = time.perf_counter()
            item = client.next_batch()
            if item is None:
                if args.drain:
                    break
                time.sleep(min(args.poll_interval, 0.05))
                continue
            latencies.append(time.perf_counter() - t0)
            steps += 1
        client.checkpoint()
        with lock:
            reports.append(
                {
                    "kind": "consumer",
                    "rank": rank,
                    "steps": steps,
                    "bytes_consumed": client.bytes_consumed,
                    "bytes_fetched": client.bytes_fetched,
                    "read_amplification": client.amplification(),
                    "throughput_bytes_per_s": client.bytes_consumed / args.duration,
                    "read_p50_s": percentile(latencies, 0.5),
                    "read_p95_s": percentile(latencies, 0.95),
                }
            )

    threads = [threading.Thread(target=run_rank, args=(r,)) for r in ranks]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for r in sorted(reports, key=lambda x: x["rank"]):
        emit(r)
    for f in sorted(failures, key=lambda x: x["rank"]):
        emit(f)
        note(f"rank {f['rank']} failed: {f['error']}")
    total_steps = sum(r["steps"] for r in reports)
    worst_amp = max((r["read_amplification"] for r in reports), default=0.0)
    note(
        f"{len(ranks)} ranks read {total_steps} steps; "
        f"worst read amplification {worst_amp:.4f}"
    )
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# gc


def cmd_gc(args) -> int:
    store = make_store(args.store)
    report = reclaim(store, args.namespace, dry_run=args.dry_run)
    record = {"kind": "reclaim", "dry_run": args.dry_run, **report.as_record()}
    emit(record)
    census = storage_census(store, args.namespace)
    emit({"kind": "census", **census.as_record()})
    note(
        f"w_global={report.w_global} trim_to={report.trimmed_to_step} "
        f"deleted {report.manifests_deleted} manifests / {report.tgb_objects_deleted} "
        f"TGB objects ({report.bytes_freed} bytes); {census.total_bytes} bytes remain"
    )
    return 0


# ---------------------------------------------------------------------------
# simulate / validate-model


def _policy_from_text(text: str) -> PolicySpec:
    kind, _, rest = text.partition(":")
    if kind == "naive":
        return PolicySpec.naive()
    if kind == "fixed":
        return PolicySpec.fixed(int(rest))
    if kind == "incr":
        return PolicySpec.incr(int(rest) if rest else 10)
    if kind == "aimd":
        parts = [float(p) for p in rest.split(",")] if rest else [1.0]
        factor = parts[1] if len(parts) > 1 else 0.5
        return PolicySpec.aimd(addend=parts[0], factor=factor)
    if kind == "dac":
        if rest:
            eps, _, delta = rest.partition(",")
            return PolicySpec.dac_policy(
                DacParams(epsilon=float(eps), delta=float(delta) if delta else 0.5)
            )
        return PolicySpec.dac_policy()
    raise usage_error(f"unknown policy {text!r}")


def cmd_simulate(args) -> int:
    if args.ablation:
        results = run_ablation(seed=args.seed, duration=args.duration)
        ranked = sorted(
            results.items(), key=lambda kv: kv[1].throughput_tgbs, reverse=True
        )
        for name, agg in ranked:
            rec = agg.as_record()
            rec["kind"] = "ablation"
            rec["policy"] = name
            rec["gap_series"] = rec["gap_series"][:: max(1, len(rec["gap_series"]) // 50)]
            rec["tau_series"] = rec["tau_series"][:: max(1, len(rec["tau_series"]) // 50)]
            emit(rec)
        note(
            "throughput ranking: "
            + " > ".join(f"{n}({a.throughput_tgbs:.1f}/s)" for n, a in ranked)
        )
        return 0
    config = SimConfig(
        n_producers=args.n_producers,
        duration=args.duration,
        tgb_interarrival=Distribution.parse(args.interarrival),
        tau=TauModel(base=args.tau0, slope=args.tau_slope),
        seed=args.seed,
        payload_bytes=args.payload_size,
        max_buffer=args.max_buffer,
        warmup=args.warmup,
        series_stride=args.series_stride,
    )
    per, agg = simulate(config, _policy_from_text(args.policy))
    for r in per:
        emit({"kind": "sim_producer", **r.as_record()})
    emit({"kind": "sim_aggregate", **agg.as_record()})
    note(
        f"{agg.committed_tgbs} TGBs committed ({agg.throughput_tgbs:.2f}/s), "
        f"conflict rate {agg.conflict_rate:.3f} "
        f"(steady {agg.steady_conflict_rate:.3f})"
    )
    return 0


def cmd_validate_model(args) -> int:
    rows = validate_model(
        n_values=tuple(args.n_values),
        tau0=args.tau0,
        seed=args.seed,
    )
    worst = 0.0
    for row in rows:
        emit({"kind": "model_row", **row.as_record()})
        worst = max(worst, abs(row.predicted - row.empirical))
    note(f"worst |predicted - empirical| = {worst:.4f} over {len(rows)} rows")
    return 0 if worst <= 0.05 else 1


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="batchplane",
        description="transactional batch data plane on object storage",
    )
    parser.add_argument("--store", default="memory", help="memory or fs:PATH")
    parser.add_argument("--namespace", default="default", help="namespace prefix")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="summarize the latest (or a pinned) manifest")
    p.add_argument("--version", type=int, default=None)
    p.add_argument("--full", action="store_true", help="dump every descriptor")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("produce", help="run synthetic producers")
    p.add_argument("--n-producers", type=int, default=4)
    p.add_argument("--payload-size", type=int, default=65536)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--dp", type=int, default=1)
    p.add_argument("--cp", type=int, default=1)
    p.add_argument("--epsilon", type=float, default=0.05, help="conflict budget")
    p.add_argument("--delta", type=float, default=0.5, help="duty budget")
    p.add_argument("--alpha", type=float, default=0.2, help="EMA coefficient")
    p.add_argument("--rho", type=float, default=0.1, help="gap jitter")
    p.add_argument("--max-lag", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--put-latency", default=None, help="e.g. uniform:0.001,0.005")
    p.add_argument(
        "--state-probe-rounds",
        type=int,
        default=32,
        help="paired commits measuring producer-state persistence overhead (0 disables)",
    )
    p.set_defaults(fn=cmd_produce)

    p = sub.add_parser("consume", help="run synthetic consumers")
    p.add_argument("--world-size", type=int, default=None)
    p.add_argument("--dp", type=int, default=1)
    p.add_argument("--cp", type=int, default=1)
    p.add_argument("--tp", type=int, default=1)
    p.add_argument("--pp", type=int, default=1)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--all-ranks", action="store_true")
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--poll-interval", type=float, default=0.2)
    p.add_argument("--prefetch-depth", type=int, default=0)
    p.add_argument("--drain", action="store_true", help="stop at end of committed data")
    p.set_defaults(fn=cmd_consume)

    p = sub.add_parser("gc", help="run one reclamation pass")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(fn=cmd_gc)

    p = sub.add_parser("simulate", help="discrete-event contention simulator")
    p.add_argument("--policy", default="dac", help="dac[:eps,delta] naive fixed:K incr:K aimd:ADD,F")
    p.add_argument("--n-producers", type=int, default=32)
    p.add_argument("--duration", type=float, default=1200.0)
    p.add_argument("--interarrival", default="exp:1.0")
    p.add_argument("--tau0", type=float, default=0.05)
    p.add_argument("--tau-slope", type=float, default=0.0)
    p.add_argument("--payload-size", type=int, default=1_000_000)
    p.add_argument("--max-buffer", type=int, default=None)
    p.add_argument("--warmup", type=float, default=300.0)
    p.add_argument("--series-stride", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ablation", action="store_true", help="run the policy comparison")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("validate-model", help="empirical vs predicted conflict rates")
    p.add_argument("--n-values", type=int, nargs="+", default=[8, 32])
    p.add_argument("--tau0", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_validate_model)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TransientIo as exc:
        note(f"transient I/O exhausted: {exc}")
        return 3
    except BatchPlaneError as exc:
        note(f"protocol violation: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
