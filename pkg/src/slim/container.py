"""Bit-exact binary tensor container.

File layout, all multi-byte integers little-endian:

========  ======  =====================================================
offset    size    content
========  ======  =====================================================
0         8       magic bytes ``SLIMTNSR``
8         4       format version (u32), currently 1
12        8       header length H in bytes (u64)
20        H       UTF-8 JSON header
20 + H    ...     raw tensor data, row-major, little-endian
========  ======  =====================================================

The header maps tensor names to ``{"dtype", "shape", "offset", "nbytes"}``
where ``offset`` is relative to the start of the data section. Supported
dtypes: ``f32``, ``i8``, ``u8``. Readers reject bad magic, unknown
versions, malformed or self-inconsistent headers, and data sections
shorter than the header promises, each with a dedicated error type; no
malformed input may escalate past those errors.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CorruptHeader,
    IoError,
    SchemaViolation,
    TruncatedData,
    UnsupportedVersion,
)

__all__ = [
    "MAGIC",
    "VERSION",
    "container_to_bytes",
    "container_from_bytes",
    "write_container",
    "read_container",
]

MAGIC = b"SLIMTNSR"
VERSION = 1

_HEADER_PREFIX = struct.Struct("<8sIQ")

# dtype tag -> (numpy dtype, itemsize)
_DTYPES = {
    "f32": np.dtype("<f4"),
    "i8": np.dtype("i1"),
    "u8": np.dtype("u1"),
}


def _tag_for(arr: np.ndarray) -> str:
    kind = arr.dtype.kind, arr.dtype.itemsize
    if arr.dtype.kind == "f":
        return "f32"
    if kind == ("i", 1):
        return "i8"
    if kind == ("u", 1):
        return "u8"
    raise SchemaViolation(
        f"unsupported dtype {arr.dtype}; containers hold f32, i8 or u8"
    )


def container_to_bytes(tensors: dict) -> bytes:
    """Serialize a name-to-array mapping to container bytes.

    Float arrays of any width are stored as f32; int8/uint8 pass through.
    Insertion order of the mapping determines data layout, and the header
    JSON is emitted with sorted keys and no whitespace, so equal inputs
    always produce identical bytes.
    """
    header = {}
    blobs = []
    offset = 0
    for name, value in tensors.items():
        if not isinstance(name, str) or not name:
            raise SchemaViolation(f"tensor name must be a non-empty string, got {name!r}")
        arr = np.asarray(value)
        tag = _tag_for(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        header[name] = {
            "dtype": tag,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(data),
        }
        blobs.append(data)
        offset += len(data)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += _HEADER_PREFIX.pack(MAGIC, VERSION, len(header_bytes))
    out += header_bytes
    for blob in blobs:
        out += blob
    return bytes(out)


def _parse_header(payload: bytes) -> tuple[dict, bytes]:
    if len(payload) < _HEADER_PREFIX.size:
        raise BadMagic("file too short for container prefix")
    magic, version, header_len = _HEADER_PREFIX.unpack_from(payload, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic bytes {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"container version {version}, reader supports {VERSION}")
    start = _HEADER_PREFIX.size
    end = start + header_len
    if header_len > len(payload) - start:
        raise CorruptHeader(
            f"header claims {header_len} bytes, only {len(payload) - start} available"
        )
    raw = payload[start:end]

    def reject_dupes(pairs):
        d = {}
        for k, v in pairs:
            if k in d:
                raise CorruptHeader(f"duplicate tensor name {k!r}")
            d[k] = v
        return d

    try:
        header = json.loads(raw.decode("utf-8"), object_pairs_hook=reject_dupes)
    except CorruptHeader:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        raise CorruptHeader(f"header is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise CorruptHeader("header must be a JSON object")
    return header, payload[end:]


def _is_count(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def container_from_bytes(payload: bytes) -> dict:
    """Parse container bytes back into a name-to-array mapping.

    Raises:
        BadMagic: wrong magic bytes (or input too short to hold them).
        UnsupportedVersion: version field is not 1.
        CorruptHeader: header malformed, or entries are self-inconsistent
            (bad dtype/shape/offset, size mismatch, overlapping ranges).
        TruncatedData: data section shorter than the header describes.
    """
    header, data = _parse_header(bytes(payload))
    tensors = {}
    spans = []
    for name, entry in header.items():
        if not isinstance(entry, dict):
            raise CorruptHeader(f"entry for {name!r} is not an object")
        try:
            tag = entry["dtype"]
            shape = entry["shape"]
            offset = entry["offset"]
            nbytes = entry["nbytes"]
        except (KeyError, TypeError) as exc:
            raise CorruptHeader(f"entry for {name!r} is missing fields") from exc
        if tag not in _DTYPES:
            raise CorruptHeader(f"entry for {name!r} has unknown dtype {tag!r}")
        if not isinstance(shape, list) or not all(_is_count(s) for s in shape):
            raise CorruptHeader(f"entry for {name!r} has a bad shape")
        if not _is_count(offset) or not _is_count(nbytes):
            raise CorruptHeader(f"entry for {name!r} has bad offset/nbytes")
        dtype = _DTYPES[tag]
        count = 1
        for s in shape:
            count *= s
        if nbytes != count * dtype.itemsize:
            raise CorruptHeader(
                f"entry for {name!r}: nbytes {nbytes} != shape product {count} * {dtype.itemsize}"
            )
        if offset + nbytes > len(data):
            raise TruncatedData(
                f"tensor {name!r} needs bytes [{offset}, {offset + nbytes}), "
                f"data section has {len(data)}"
            )
        spans.append((offset, offset + nbytes, name))
        arr = np.frombuffer(data[offset : offset + nbytes], dtype=dtype)
        tensors[name] = arr.reshape(shape).copy()
    spans.sort()
    for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
        if b0 < a1:
            raise CorruptHeader(f"tensors {an!r} and {bn!r} overlap in the data section")
    # return in data-section order so a parse/serialize round trip assigns
    # the same offsets and reproduces the payload bit for bit
    return {name: tensors[name] for _, _, name in spans}


def write_container(path, tensors: dict) -> None:
    """Write tensors to ``path`` in the container format.

    Raises:
        IoError: the underlying file operation failed.
        SchemaViolation: a tensor has an unsupported dtype or bad name.
    """
    payload = container_to_bytes(tensors)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_container(path) -> dict:
    """Read a container file; inverse of :func:`write_container`.

    Raises:
        IoError: the file cannot be read.
        BadMagic / UnsupportedVersion / CorruptHeader / TruncatedData:
            the file is not a valid container.
    """
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return container_from_bytes(payload)
