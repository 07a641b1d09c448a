"""batchplane: a coordinator-free transactional batch data plane on object storage.

Producers publish globally ordered, atomically visible batches through
versioned manifests committed with conditional writes; consumers read
rank-specific byte ranges deterministically; retention follows checkpoint
watermarks. See README.md for the full tour.
"""

from .consumer import ConsumerClient, Cursor, RankSpec, RemapPlan, project, remap
from .dac import DacParams, DacState
from .errors import BatchPlaneError
from .lifecycle import ReclaimReport, StorageCensus, global_watermark, reclaim, storage_census
from .manifest import (
    CommitOutcome,
    Manifest,
    ProducerState,
    TgbDescriptor,
    build_candidate,
    decode_manifest,
    encode_manifest,
    latest,
    manifest_key,
    rebase,
    try_commit,
)
from .producer import ProducerClient, TickReport
from .store import FaultProfile, FilesystemStore, MemoryStore, ObjectStore, PutOutcome
from .tgb import FooterIndex, MeshSpec, SliceEntry, decode_footer, encode_tgb, slice_range, tgb_key
from .watermarks import Watermark, watermark_key

__version__ = "0.1.0"

__all__ = [
    "BatchPlaneError",
    "CommitOutcome",
    "ConsumerClient",
    "Cursor",
    "DacParams",
    "DacState",
    "FaultProfile",
    "FilesystemStore",
    "FooterIndex",
    "Manifest",
    "MemoryStore",
    "MeshSpec",
    "ObjectStore",
    "ProducerClient",
    "ProducerState",
    "PutOutcome",
    "RankSpec",
    "ReclaimReport",
    "RemapPlan",
    "SliceEntry",
    "StorageCensus",
    "TgbDescriptor",
    "TickReport",
    "Watermark",
    "build_candidate",
    "decode_footer",
    "decode_manifest",
    "encode_manifest",
    "encode_tgb",
    "global_watermark",
    "latest",
    "manifest_key",
    "project",
    "rebase",
    "reclaim",
    "remap",
    "slice_range",
    "storage_census",
    "tgb_key",
    "try_commit",
    "watermark_key",
]
