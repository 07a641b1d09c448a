"""TGB byte-layout tests: round trips, the cumulative-sum oracle, trailer checks."""

import random
import struct

import pytest

from batchplane.errors import BadMagic, CoordinateOutOfMesh, ShapeMismatch, TruncatedFooter
from batchplane.store import MemoryStore
from batchplane.tgb import (
    MAGIC,
    TRAILER_SIZE,
    MeshSpec,
    decode_footer,
    encode_tgb,
    footer_size,
    read_footer,
    slice_range,
    tgb_key,
)

from oracles import slice_offsets_ref


def matrix(mesh, payloads):
    it = iter(payloads)
    return [[next(it) for _ in range(mesh.cp)] for _ in range(mesh.dp)]


def test_single_slice_layout():
    mesh = MeshSpec(1, 1)
    blob = encode_tgb([[b"abc"]], mesh)
    footer = decode_footer(blob)
    assert footer.mesh == mesh
    (entry,) = footer.entries
    assert (entry.d, entry.c, entry.offset, entry.length) == (0, 0, 0, 3)
    assert blob[:3] == b"abc"
    assert blob[-4:] == MAGIC


def test_offsets_match_cumulative_sum_oracle():
    mesh = MeshSpec(2, 2)
    lengths = [1, 2, 3, 4]
    expected_offsets, total = slice_offsets_ref(lengths)
    assert expected_offsets == [0, 1, 3, 6]  # frozen from the oracle
    payloads = [bytes([65 + i]) * n for i, n in enumerate(lengths)]
    blob = encode_tgb(matrix(mesh, payloads), mesh)
    footer = decode_footer(blob)
    assert [e.offset for e in footer.entries] == expected_offsets
    assert [e.length for e in footer.entries] == lengths
    assert footer.total_body_bytes() == total
    # (d=1, c=0) is the third row-major slice: offset 3, length 3
    assert slice_range(footer, 1, 0) == (3, 3)
    assert slice_range(footer, 0, 0) == (0, lengths[0])


def test_empty_slice_keeps_later_offsets():
    mesh = MeshSpec(1, 3)
    blob = encode_tgb([[b"aa", b"", b"cc"]], mesh)
    footer = decode_footer(blob)
    assert [(e.offset, e.length) for e in footer.entries] == [(0, 2), (2, 0), (2, 2)]


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        encode_tgb([[b"a", b"b"]], MeshSpec(2, 1))
    with pytest.raises(ShapeMismatch):
        encode_tgb([[b"a"], [b"b", b"c"]], MeshSpec(2, 1))


def test_round_trip_random_matrices():
    rng = random.Random(1234)
    for _ in range(50):
        mesh = MeshSpec(rng.randint(1, 5), rng.randint(1, 5))
        payloads = [
            rng.randbytes(rng.randint(0, 200)) for _ in range(mesh.slots)
        ]
        blob = encode_tgb(matrix(mesh, payloads), mesh)
        footer = decode_footer(blob)
        for d in range(mesh.dp):
            for c in range(mesh.cp):
                off, length = slice_range(footer, d, c)
                assert blob[off : off + length] == payloads[d * mesh.cp + c]


def test_encode_is_deterministic():
    mesh = MeshSpec(2, 3)
    payloads = [bytes([i]) * i for i in range(6)]
    a = encode_tgb(matrix(mesh, payloads), mesh)
    b = encode_tgb(matrix(mesh, payloads), mesh)
    assert a == b


def test_trailer_is_bit_exact():
    mesh = MeshSpec(1, 1)
    blob = encode_tgb([[b"xy"]], mesh)
    fsize = footer_size(mesh)
    assert blob[-4:] == bytes([0x54, 0x47, 0x42, 0x31])  # "TGB1"
    (encoded_len,) = struct.unpack("<Q", blob[-12:-4])
    assert encoded_len == fsize
    assert len(blob) == 2 + fsize + TRAILER_SIZE


def test_decode_bad_magic():
    blob = bytearray(encode_tgb([[b"abc"]], MeshSpec(1, 1)))
    blob[-1] ^= 0xFF
    with pytest.raises(BadMagic):
        decode_footer(bytes(blob))


def test_decode_truncated():
    with pytest.raises(TruncatedFooter):
        decode_footer(b"short" + MAGIC[:2])
    blob = encode_tgb([[b"abc"]], MeshSpec(1, 1))
    with pytest.raises(TruncatedFooter):
        decode_footer(blob[-8:])  # trailer missing its head


def test_coordinate_out_of_mesh():
    footer = decode_footer(encode_tgb([[b"a"], [b"b"]], MeshSpec(2, 1)))
    with pytest.raises(CoordinateOutOfMesh):
        slice_range(footer, 2, 0)
    with pytest.raises(CoordinateOutOfMesh):
        slice_range(footer, 0, 1)


def test_tgb_key_format():
    assert tgb_key("ns", "p0", 7) == "ns/data/p0/000000000007.tgb"
    assert tgb_key("a/b", "prod-1", 0) == "a/b/data/prod-1/000000000000.tgb"


def test_read_footer_with_known_mesh_reads_exact_tail():
    store = MemoryStore()
    mesh = MeshSpec(2, 2)
    payloads = [b"q" * 100 for _ in range(4)]
    blob = encode_tgb(matrix(mesh, payloads), mesh)
    store.put_if_absent("t", blob)
    footer, fetched = read_footer(store, "t", len(blob), mesh)
    assert fetched == footer_size(mesh) + TRAILER_SIZE
    assert footer.mesh == mesh


def test_read_footer_without_mesh_handles_large_footers():
    store = MemoryStore()
    mesh = MeshSpec(32, 16)  # footer is 8 + 16*512 = 8200 bytes > first read
    payloads = [b"z" * 10 for _ in range(mesh.slots)]
    blob = encode_tgb(matrix(mesh, payloads), mesh)
    store.put_if_absent("big", blob)
    footer, fetched = read_footer(store, "big", len(blob))
    assert footer.mesh == mesh
    assert fetched > footer_size(mesh)
    for d in range(mesh.dp):
        for c in range(mesh.cp):
            off, length = slice_range(footer, d, c)
            assert blob[off : off + length] == b"z" * 10
