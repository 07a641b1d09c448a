/**
 * Consumer handle: deterministic rank projection and cursor-driven range
 * reads, with checkpoint watermarks for exactly-once resumption.
 */

import {
  ClosedHandle,
  InvalidTopology,
  NotFound,
  StepReclaimed,
  WatermarkMissing,
} from "./errors.js";
import * as mf from "./manifest.js";
import { FilesystemStore } from "./store.js";
import { FooterIndex, readFooter, sliceRange } from "./tgb.js";
import { Watermark, decodeWatermark, encodeWatermark, watermarkKey } from "./watermarks.js";

export interface RankSpec {
  rank: number;
  worldSize: number;
  dp: number;
  cp: number;
  tp?: number;
  pp?: number;
}

export function project(spec: RankSpec): [number, number] {
  const tp = spec.tp ?? 1;
  const pp = spec.pp ?? 1;
  if (spec.dp < 1 || spec.cp < 1 || tp < 1 || pp < 1) {
    throw new InvalidTopology("all mesh degrees must be >= 1");
  }
  if (spec.worldSize !== spec.dp * spec.cp * tp * pp) {
    throw new InvalidTopology(
      `worldSize ${spec.worldSize} != dp*cp*tp*pp = ${spec.dp * spec.cp * tp * pp}`
    );
  }
  if (spec.rank < 0 || spec.rank >= spec.worldSize) {
    throw new InvalidTopology(`rank ${spec.rank} outside world of ${spec.worldSize}`);
  }
  const inner = tp * pp;
  return [Math.floor(spec.rank / (spec.cp * inner)), Math.floor(spec.rank / inner) % spec.cp];
}

export interface Cursor {
  version: number;
  step: number;
}

export interface NextBatch {
  data: Uint8Array;
  cursor: Cursor;
}

export class BoundConsumer {
  readonly namespace: string;
  readonly consumerId: string;
  readonly rankSpec: RankSpec;
  cursor: Cursor;
  bytesFetched = 0;
  bytesConsumed = 0;
  private manifest: mf.Manifest | null = null;
  private footerCache = new Map<string, FooterIndex>();
  private closed = false;

  constructor(
    private readonly store: FilesystemStore,
    namespace: string,
    consumerId: string,
    rankSpec: RankSpec,
    cursor?: Cursor
  ) {
    project(rankSpec); // validate topology up front
    this.namespace = namespace;
    this.consumerId = consumerId;
    this.rankSpec = rankSpec;
    this.cursor = cursor ?? { version: -1, step: 0 };
  }

  /** Resume from the persisted watermark: no step skipped, none repeated. */
  static restore(
    store: FilesystemStore,
    namespace: string,
    consumerId: string,
    rankSpec: RankSpec
  ): BoundConsumer {
    let raw: Uint8Array;
    try {
      raw = store.get(watermarkKey(namespace, consumerId));
    } catch (err) {
      if (err instanceof NotFound) {
        throw new WatermarkMissing(`no watermark for ${consumerId}`);
      }
      throw err;
    }
    const mark = decodeWatermark(raw);
    const consumer = new BoundConsumer(store, namespace, consumerId, rankSpec, {
      version: mark.version,
      step: mark.step,
    });
    const current = mf.latest(store, namespace);
    if (current && mark.step < current.trimFloor) {
      throw new StepReclaimed(
        `watermark step ${mark.step} below trim floor ${current.trimFloor}`
      );
    }
    return consumer;
  }

  private check(): void {
    if (this.closed) throw new ClosedHandle("consumer handle is closed");
  }

  private loadManifest(version: number): mf.Manifest | null {
    try {
      const data = this.store.get(mf.manifestKey(this.namespace, version));
      this.bytesFetched += data.length;
      return mf.decodeManifest(data);
    } catch (err) {
      if (err instanceof NotFound) return null;
      throw err;
    }
  }

  private ensureManifest(): boolean {
    if (!this.manifest) {
      let m =
        this.cursor.version >= 0 ? this.loadManifest(this.cursor.version) : null;
      if (!m) {
        m = mf.latest(this.store, this.namespace);
        if (m) this.bytesFetched += mf.encodeManifest(m).length;
      }
      if (!m) return false;
      this.manifest = m;
      this.cursor = { version: m.version, step: this.cursor.step };
    }
    while (this.cursor.step >= mf.nextStep(this.manifest)) {
      const next = this.loadManifest(this.manifest.version + 1);
      if (!next) break;
      this.manifest = next;
      this.cursor = { version: next.version, step: this.cursor.step };
    }
    if (this.cursor.step < this.manifest.trimFloor) {
      throw new StepReclaimed(
        `step ${this.cursor.step} below trim floor ${this.manifest.trimFloor}`
      );
    }
    return this.cursor.step < mf.nextStep(this.manifest);
  }

  /** This rank's slice of the next step, or null when nothing new exists. */
  nextBatch(): NextBatch | null {
    this.check();
    if (!this.ensureManifest()) return null;
    const desc = mf.descriptorAt(this.manifest!, this.cursor.step);
    const key = desc.objectKeys[0]!;
    let footer = this.footerCache.get(key);
    if (!footer) {
      const res = readFooter(this.store, key, desc.totalBytes, desc.mesh);
      footer = res.footer;
      this.bytesFetched += res.fetched;
      this.footerCache.set(key, footer);
    }
    const [d, c] = project(this.rankSpec);
    const [offset, length] = sliceRange(footer, d, c);
    const data = this.store.getRange(key, offset, length);
    this.bytesFetched += data.length;
    this.bytesConsumed += data.length;
    this.cursor = { version: this.manifest!.version, step: this.cursor.step + 1 };
    return { data, cursor: this.cursor };
  }

  /** Persist the cursor as this consumer's watermark (overwrite-only). */
  checkpoint(): Watermark {
    this.check();
    const mark: Watermark = {
      consumerId: this.consumerId,
      version: Math.max(this.cursor.version, 0),
      step: this.cursor.step,
    };
    this.store.put(watermarkKey(this.namespace, this.consumerId), encodeWatermark(mark));
    return mark;
  }

  amplification(): number {
    return this.bytesConsumed === 0 ? 0 : this.bytesFetched / this.bytesConsumed;
  }

  close(): void {
    this.closed = true;
  }
}
