export * from "./errors.js";
export { FilesystemStore, validateKey, type PutOutcome } from "./store.js";
export {
  MAGIC,
  TRAILER_SIZE,
  decodeFooter,
  encodeTgb,
  footerSize,
  readFooter,
  sliceRange,
  tgbKey,
  type FooterIndex,
  type MeshSpec,
  type SliceEntry,
} from "./tgb.js";
export * as manifest from "./manifest.js";
export {
  DEFAULT_PARAMS,
  DacState,
  conflictProbability,
  duty,
  jitteredGap,
  tConf,
  tCost,
  tStar,
  updateTau,
  type DacParams,
} from "./dac.js";
export {
  decodeWatermark,
  encodeWatermark,
  watermarkKey,
  type Watermark,
} from "./watermarks.js";
export { BoundProducer, type ProducerOptions, type TickReport } from "./producer.js";
export { BoundConsumer, project, type Cursor, type NextBatch, type RankSpec } from "./consumer.js";
