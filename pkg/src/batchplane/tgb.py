"""Transactional Global Batch byte layout.

One object per batch: D*C contiguous data slices in (d, c) row-major order,
followed by a fixed-width footer index and a 12-byte trailer. A rank that
knows the footer fetches exactly one byte range per batch.

Layout:

    [slice 0,0][slice 0,1]...[slice D-1,C-1][footer][footer_len u64 LE]["TGB1"]

Footer: dp u32 LE, cp u32 LE, then D*C (offset u64 LE, length u64 LE) pairs
row-major. Offsets are relative to the start of the object.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

from .errors import BadMagic, CoordinateOutOfMesh, ShapeMismatch, TruncatedFooter
from .store import ObjectStore

MAGIC = b"TGB1"
TRAILER_SIZE = 12  # u64 footer length + 4 magic bytes

# One tail read of this many bytes covers the footer for meshes up to 256
# slices; larger footers cost a second read.
DEFAULT_TAIL_READ = 4096 + TRAILER_SIZE


@dataclass(frozen=True)
class MeshSpec:
    """Data-relevant mesh extent: dp replicas x cp context ranks.

    Tensor/pipeline degrees do not appear: ranks in the same (d, c) position
    read identical bytes, so only D*C slices exist.
    """

    dp: int
    cp: int

    def __post_init__(self):
        if self.dp < 1 or self.cp < 1:
            raise ShapeMismatch(f"mesh must be at least 1x1, got {self.dp}x{self.cp}")

    @property
    def slots(self) -> int:
        return self.dp * self.cp


@dataclass(frozen=True)
class SliceEntry:
    d: int
    c: int
    offset: int
    length: int


@dataclass(frozen=True)
class FooterIndex:
    mesh: MeshSpec
    entries: tuple[SliceEntry, ...]

    def total_body_bytes(self) -> int:
        return sum(e.length for e in self.entries)


def footer_size(mesh: MeshSpec) -> int:
    return 8 + 16 * mesh.slots


def tgb_key(namespace: str, producer_id: str, producer_seq: int) -> str:
    return f"{namespace}/data/{producer_id}/{producer_seq:012d}.tgb"


def encode_footer(footer: FooterIndex) -> bytes:
    out = [struct.pack("<II", footer.mesh.dp, footer.mesh.cp)]
    for e in footer.entries:
        out.append(struct.pack("<QQ", e.offset, e.length))
    return b"".join(out)


def encode_tgb(slices: Sequence[Sequence[bytes]], mesh: MeshSpec) -> bytes:
    """Serialize a (d, c)-indexed matrix of opaque payloads.

    Deterministic: byte-identical output for identical inputs.
    """
    if len(slices) != mesh.dp or any(len(row) != mesh.cp for row in slices):
        raise ShapeMismatch(
            f"expected {mesh.dp}x{mesh.cp} payload matrix, got "
            f"{len(slices)}x{[len(r) for r in slices]}"
        )
    entries = []
    offset = 0
    body = []
    for d in range(mesh.dp):
        for c in range(mesh.cp):
            payload = bytes(slices[d][c])
            entries.append(SliceEntry(d, c, offset, len(payload)))
            body.append(payload)
            offset += len(payload)
    footer = encode_footer(FooterIndex(mesh, tuple(entries)))
    trailer = struct.pack("<Q", len(footer)) + MAGIC
    return b"".join(body) + footer + trailer


def decode_footer(tail: bytes) -> FooterIndex:
    """Parse a footer from the final bytes of a TGB object.

    ``tail`` must include the trailer and the whole footer; anything before
    them is ignored.
    """
    if len(tail) < TRAILER_SIZE:
        raise TruncatedFooter(f"tail of {len(tail)} bytes is shorter than the trailer")
    if tail[-4:] != MAGIC:
        raise BadMagic(f"expected trailer magic {MAGIC!r}, got {tail[-4:]!r}")
    (footer_len,) = struct.unpack("<Q", tail[-TRAILER_SIZE:-4])
    if footer_len + TRAILER_SIZE > len(tail):
        raise TruncatedFooter(
            f"footer of {footer_len} bytes does not fit in tail of {len(tail)}"
        )
    raw = tail[len(tail) - TRAILER_SIZE - footer_len : len(tail) - TRAILER_SIZE]
    if len(raw) < 8:
        raise TruncatedFooter("footer shorter than its mesh header")
    dp, cp = struct.unpack("<II", raw[:8])
    mesh = MeshSpec(dp, cp)
    if len(raw) != footer_size(mesh):
        raise TruncatedFooter(
            f"footer length {len(raw)} does not match mesh {dp}x{cp}"
        )
    entries = []
    pos = 8
    for d in range(dp):
        for c in range(cp):
            offset, length = struct.unpack("<QQ", raw[pos : pos + 16])
            entries.append(SliceEntry(d, c, offset, length))
            pos += 16
    return FooterIndex(mesh, tuple(entries))


def slice_range(footer: FooterIndex, d: int, c: int) -> tuple[int, int]:
    """Byte range of slice (d, c); feed straight into get_range."""
    mesh = footer.mesh
    if not (0 <= d < mesh.dp and 0 <= c < mesh.cp):
        raise CoordinateOutOfMesh(f"({d},{c}) outside mesh {mesh.dp}x{mesh.cp}")
    entry = footer.entries[d * mesh.cp + c]
    return entry.offset, entry.length


def read_footer(
    store: ObjectStore,
    key: str,
    object_size: int,
    mesh: MeshSpec | None = None,
) -> tuple[FooterIndex, int]:
    """Fetch and decode the footer with tail range reads.

    With a known mesh the read is exact (footer + trailer). Without one, the
    first read grabs DEFAULT_TAIL_READ bytes and a second read follows only if
    the footer turned out larger. Returns (footer, bytes_fetched) so callers
    can account for read amplification.
    """
    if mesh is not None:
        want = min(object_size, footer_size(mesh) + TRAILER_SIZE)
        tail = store.get_range(key, object_size - want, want)
        return decode_footer(tail), want
    want = min(object_size, DEFAULT_TAIL_READ)
    tail = store.get_range(key, object_size - want, want)
    fetched = want
    if len(tail) >= TRAILER_SIZE and tail[-4:] == MAGIC:
        (footer_len,) = struct.unpack("<Q", tail[-TRAILER_SIZE:-4])
        need = footer_len + TRAILER_SIZE
        if need > len(tail):
            tail = store.get_range(key, object_size - need, need)
            fetched += need
    return decode_footer(tail), fetched
