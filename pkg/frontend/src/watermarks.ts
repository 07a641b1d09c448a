/** Consumer watermark objects: canonical JSON, one per consumer, overwritten. */

import { SchemaViolation } from "./errors.js";

export interface Watermark {
  consumerId: string;
  version: number;
  step: number;
}

export function watermarkKey(namespace: string, consumerId: string): string {
  return `${namespace}/watermarks/${consumerId}.wm`;
}

export function encodeWatermark(w: Watermark): Uint8Array {
  const text = `{"consumer_id":${JSON.stringify(w.consumerId)},"step":${w.step},"version":${w.version}}`;
  return new TextEncoder().encode(text);
}

export function decodeWatermark(data: Uint8Array): Watermark {
  let obj: any;
  try {
    obj = JSON.parse(new TextDecoder("utf-8", { fatal: true }).decode(data));
  } catch (err) {
    throw new SchemaViolation(`watermark is not valid JSON: ${err}`);
  }
  if (
    typeof obj?.consumer_id !== "string" ||
    !Number.isInteger(obj.version) ||
    !Number.isInteger(obj.step)
  ) {
    throw new SchemaViolation("bad watermark object");
  }
  return { consumerId: obj.consumer_id, version: obj.version, step: obj.step };
}
