/**
 * Producer handle: stage batches as immutable objects, publish them through
 * the conditional-write commit loop, recover exactly-once after a crash.
 *
 * The handle is confined to one caller; use after close() throws. Clock and
 * jitter randomness are injectable so scripted runs are fully deterministic.
 */

import {
  ClosedHandle,
  LagExceeded,
  DeadlineExceeded,
  NotFound,
} from "./errors.js";
import { DEFAULT_PARAMS, DacParams, DacState, tCost } from "./dac.js";
import * as mf from "./manifest.js";
import { FilesystemStore } from "./store.js";
import { MeshSpec, TRAILER_SIZE, encodeTgb, footerSize, readFooter, tgbKey } from "./tgb.js";

export interface TickReport {
  attempted: boolean;
  committed: boolean;
  version: number | null;
  newGap: number;
  tauObs: number;
  appended: number;
}

export interface ProducerOptions {
  params?: Partial<DacParams>;
  maxLag?: number;
  clock?: () => number; // monotonic seconds
  random?: () => number; // uniform [0,1) for gap jitter
}

function adoptDescriptor(
  store: FilesystemStore,
  key: string,
  producerId: string,
  producerSeq: number
): mf.TgbDescriptor | null {
  try {
    const total = store.size(key);
    const { footer } = readFooter(store, key, total);
    const body = footer.entries.reduce((n, e) => n + e.length, 0);
    if (body + footerSize(footer.mesh) + TRAILER_SIZE !== total) return null;
    return {
      stepIndex: -1,
      objectKeys: [key],
      mesh: footer.mesh,
      totalBytes: total,
      producerId,
      producerSeq,
    };
  } catch {
    return null;
  }
}

export class BoundProducer {
  readonly namespace: string;
  readonly producerId: string;
  readonly params: DacParams;
  nextSeq = 0;
  pending: mf.TgbDescriptor[] = [];
  dac = new DacState();
  private base: mf.Manifest = mf.EMPTY;
  private closed = false;
  private readonly store: FilesystemStore;
  private readonly maxLag?: number;
  private readonly clock: () => number;
  private readonly random: () => number;

  private constructor(
    store: FilesystemStore,
    namespace: string,
    producerId: string,
    opts: ProducerOptions
  ) {
    this.store = store;
    this.namespace = namespace;
    this.producerId = producerId;
    this.params = { ...DEFAULT_PARAMS, ...opts.params };
    this.maxLag = opts.maxLag;
    this.clock = opts.clock ?? (() => performance.now() / 1000);
    this.random = opts.random ?? Math.random;
  }

  /** Recover persisted state for producerId and resume after it. */
  static open(
    store: FilesystemStore,
    namespace: string,
    producerId: string,
    opts: ProducerOptions = {}
  ): BoundProducer {
    const producer = new BoundProducer(store, namespace, producerId, opts);
    const current = mf.latest(store, namespace);
    if (current) {
      producer.base = current;
      producer.dac.nProducers = Math.max(1, current.producerStates.size);
    }
    const committed = mf.committedOffset(producer.base, producerId);
    producer.nextSeq = committed + 1;

    const prefix = `${namespace}/data/${producerId}/`;
    const staged = store
      .list(prefix)
      .filter((k) => k.endsWith(".tgb"))
      .map((k) => parseInt(k.slice(prefix.length, -".tgb".length), 10))
      .filter((v) => !Number.isNaN(v))
      .sort((a, b) => a - b);
    let expect = committed + 1;
    for (const seq of staged) {
      if (seq <= committed) continue; // already visible
      const key = tgbKey(namespace, producerId, seq);
      const desc = seq === expect ? adoptDescriptor(store, key, producerId, seq) : null;
      if (!desc) {
        store.delete(key); // unusable past the consecutive prefix: re-produce
        continue;
      }
      producer.pending.push(desc);
      producer.nextSeq = seq + 1;
      expect = seq + 1;
    }
    return producer;
  }

  private check(): void {
    if (this.closed) throw new ClosedHandle("producer handle is closed");
  }

  unacknowledged(): number {
    return this.pending.length;
  }

  /** Stage one batch at its deterministic key. */
  writeTgb(slices: Uint8Array[][], mesh: MeshSpec): number {
    this.check();
    if (this.maxLag !== undefined && this.unacknowledged() >= this.maxLag) {
      throw new LagExceeded(`${this.unacknowledged()} staged at maxLag=${this.maxLag}`);
    }
    const seq = this.nextSeq;
    const key = tgbKey(this.namespace, this.producerId, seq);
    const blob = encodeTgb(slices, mesh);
    const outcome = this.store.putIfAbsent(key, blob);
    let desc: mf.TgbDescriptor | null;
    if (outcome === "created") {
      desc = {
        stepIndex: -1,
        objectKeys: [key],
        mesh,
        totalBytes: blob.length,
        producerId: this.producerId,
        producerSeq: seq,
      };
    } else {
      desc = adoptDescriptor(this.store, key, this.producerId, seq);
      if (!desc) throw new NotFound(`staged object ${key} exists but is unreadable`);
    }
    this.pending.push(desc);
    this.nextSeq = seq + 1;
    return seq;
  }

  /** One pass of the commit loop; attempts iff the gap elapsed. */
  tick(now?: number): TickReport {
    this.check();
    const t = now ?? this.clock();
    if (this.pending.length === 0 || t - this.dac.tLast < this.dac.gap) {
      return {
        attempted: false,
        committed: false,
        version: null,
        newGap: this.dac.gap,
        tauObs: 0,
        appended: 0,
      };
    }
    return this.attempt();
  }

  private refreshBase(): void {
    let newest = this.base.version;
    while (this.store.exists(mf.manifestKey(this.namespace, newest + 1))) newest += 1;
    if (newest === this.base.version) return;
    const m = mf.decodeManifest(this.store.get(mf.manifestKey(this.namespace, newest)));
    this.base = m;
    this.pending = mf.filterUncommitted(m, this.pending, this.producerId);
  }

  private attempt(): TickReport {
    const t0 = this.clock();
    this.refreshBase();
    const { candidate, appended } = mf.rebase(this.base, this.pending, this.producerId);
    if (appended.length === 0) {
      this.pending = [];
      const end = this.clock();
      this.afterAttempt(end, end - t0);
      return {
        attempted: true,
        committed: true,
        version: this.base.version,
        newGap: this.dac.gap,
        tauObs: end - t0,
        appended: 0,
      };
    }
    const outcome = mf.tryCommit(this.store, this.namespace, candidate);
    const end = this.clock();
    const tauObs = end - t0;
    if (outcome.committed) {
      this.base = candidate;
      this.pending = [];
      this.afterAttempt(end, tauObs);
      return {
        attempted: true,
        committed: true,
        version: outcome.version ?? null,
        newGap: this.dac.gap,
        tauObs,
        appended: appended.length,
      };
    }
    const winner = mf.latest(this.store, this.namespace);
    if (winner) {
      this.pending = mf.filterUncommitted(winner, this.pending, this.producerId);
      this.base = winner;
    }
    this.afterAttempt(end, tauObs);
    return {
      attempted: true,
      committed: false,
      version: null,
      newGap: this.dac.gap,
      tauObs,
      appended: 0,
    };
  }

  private afterAttempt(now: number, tauObs: number): void {
    this.dac.observe(tauObs, this.params);
    this.dac.nProducers = Math.max(1, this.base.producerStates.size);
    this.dac.recomputeGap(this.params, this.random());
    this.dac.tLast = now;
  }

  /** Drain staged batches before exiting; gating relaxes to the duty bound. */
  finalize(deadline?: number): void {
    this.check();
    while (this.pending.length > 0) {
      const now = this.clock();
      if (deadline !== undefined && now >= deadline) {
        throw new DeadlineExceeded(`${this.pending.length} batches still staged`);
      }
      if (this.dac.tauHat !== null) {
        const floor = tCost(this.dac.tauHat, this.params.delta);
        if (now - this.dac.tLast < floor) {
          const wait = this.dac.tLast + floor - now;
          const until = Date.now() + wait * 1000;
          while (Date.now() < until) {
            /* synchronous pacing; drains are short */
          }
        }
      }
      this.attempt();
    }
  }

  close(): void {
    this.closed = true;
  }
}
