/**
 * Transactional Global Batch codec: dp*cp contiguous slices in (d, c)
 * row-major order, a fixed-width footer index, and a 12-byte trailer
 * (u64 LE footer length + "TGB1"). Bit-exact with every other client.
 */

import {
  BadMagic,
  CoordinateOutOfMesh,
  ShapeMismatch,
  TruncatedFooter,
} from "./errors.js";
import type { FilesystemStore } from "./store.js";

export const MAGIC = new Uint8Array([0x54, 0x47, 0x42, 0x31]); // "TGB1"
export const TRAILER_SIZE = 12;
export const DEFAULT_TAIL_READ = 4096 + TRAILER_SIZE;

export interface MeshSpec {
  dp: number;
  cp: number;
}

export interface SliceEntry {
  d: number;
  c: number;
  offset: number;
  length: number;
}

export interface FooterIndex {
  mesh: MeshSpec;
  entries: SliceEntry[];
}

export function footerSize(mesh: MeshSpec): number {
  return 8 + 16 * mesh.dp * mesh.cp;
}

export function tgbKey(namespace: string, producerId: string, seq: number): string {
  return `${namespace}/data/${producerId}/${String(seq).padStart(12, "0")}.tgb`;
}

function u64At(view: DataView, offset: number): number {
  const big = view.getBigUint64(offset, true);
  if (big > BigInt(Number.MAX_SAFE_INTEGER)) {
    throw new TruncatedFooter(`u64 value ${big} exceeds safe integer range`);
  }
  return Number(big);
}

export function encodeTgb(slices: Uint8Array[][], mesh: MeshSpec): Uint8Array {
  if (mesh.dp < 1 || mesh.cp < 1) {
    throw new ShapeMismatch(`mesh must be at least 1x1, got ${mesh.dp}x${mesh.cp}`);
  }
  if (slices.length !== mesh.dp || slices.some((row) => row.length !== mesh.cp)) {
    throw new ShapeMismatch(
      `expected ${mesh.dp}x${mesh.cp} payload matrix, got ${slices.length} rows`
    );
  }
  let bodyBytes = 0;
  for (const row of slices) for (const payload of row) bodyBytes += payload.length;
  const fsize = footerSize(mesh);
  const out = new Uint8Array(bodyBytes + fsize + TRAILER_SIZE);
  const view = new DataView(out.buffer);
  let offset = 0;
  const entries: number[] = [];
  for (let d = 0; d < mesh.dp; d++) {
    for (let c = 0; c < mesh.cp; c++) {
      const payload = slices[d]![c]!;
      out.set(payload, offset);
      entries.push(offset, payload.length);
      offset += payload.length;
    }
  }
  view.setUint32(offset, mesh.dp, true);
  view.setUint32(offset + 4, mesh.cp, true);
  let pos = offset + 8;
  for (let i = 0; i < entries.length; i += 2) {
    view.setBigUint64(pos, BigInt(entries[i]!), true);
    view.setBigUint64(pos + 8, BigInt(entries[i + 1]!), true);
    pos += 16;
  }
  view.setBigUint64(pos, BigInt(fsize), true);
  out.set(MAGIC, pos + 8);
  return out;
}

export function decodeFooter(tail: Uint8Array): FooterIndex {
  if (tail.length < TRAILER_SIZE) {
    throw new TruncatedFooter(`tail of ${tail.length} bytes is shorter than the trailer`);
  }
  const magic = tail.subarray(tail.length - 4);
  if (!magic.every((b, i) => b === MAGIC[i])) {
    throw new BadMagic(`expected TGB1 trailer, got ${Buffer.from(magic).toString("hex")}`);
  }
  const view = new DataView(tail.buffer, tail.byteOffset, tail.byteLength);
  const footerLen = u64At(view, tail.length - TRAILER_SIZE);
  if (footerLen + TRAILER_SIZE > tail.length) {
    throw new TruncatedFooter(`footer of ${footerLen} bytes does not fit in tail`);
  }
  const start = tail.length - TRAILER_SIZE - footerLen;
  if (footerLen < 8) throw new TruncatedFooter("footer shorter than its mesh header");
  const dp = view.getUint32(start, true);
  const cp = view.getUint32(start + 4, true);
  if (dp < 1 || cp < 1 || footerLen !== footerSize({ dp, cp })) {
    throw new TruncatedFooter(`footer length ${footerLen} does not match mesh ${dp}x${cp}`);
  }
  const entries: SliceEntry[] = [];
  let pos = start + 8;
  for (let d = 0; d < dp; d++) {
    for (let c = 0; c < cp; c++) {
      entries.push({ d, c, offset: u64At(view, pos), length: u64At(view, pos + 8) });
      pos += 16;
    }
  }
  return { mesh: { dp, cp }, entries };
}

export function sliceRange(footer: FooterIndex, d: number, c: number): [number, number] {
  const { dp, cp } = footer.mesh;
  if (d < 0 || d >= dp || c < 0 || c >= cp) {
    throw new CoordinateOutOfMesh(`(${d},${c}) outside mesh ${dp}x${cp}`);
  }
  const entry = footer.entries[d * cp + c]!;
  return [entry.offset, entry.length];
}

/** Fetch and decode a footer via tail range reads; exact when the mesh is known. */
export function readFooter(
  store: FilesystemStore,
  key: string,
  objectSize: number,
  mesh?: MeshSpec
): { footer: FooterIndex; fetched: number } {
  if (mesh) {
    const want = Math.min(objectSize, footerSize(mesh) + TRAILER_SIZE);
    const tail = store.getRange(key, objectSize - want, want);
    return { footer: decodeFooter(tail), fetched: want };
  }
  const want = Math.min(objectSize, DEFAULT_TAIL_READ);
  let tail = store.getRange(key, objectSize - want, want);
  let fetched = want;
  if (tail.length >= TRAILER_SIZE) {
    const view = new DataView(tail.buffer, tail.byteOffset, tail.byteLength);
    const footerLen = u64At(view, tail.length - TRAILER_SIZE);
    const need = footerLen + TRAILER_SIZE;
    if (need > tail.length) {
      tail = store.getRange(key, objectSize - need, need);
      fetched += need;
    }
  }
  return { footer: decodeFooter(tail), fetched };
}
