"""Binary persistence formats.

Matrix file (``.svmx``)::

    offset  size      field
    0       4         magic b"SVMX"
    4       2         format version, u16 little-endian (currently 1)
    6       1         element type tag, u8 (1 = float64 little-endian)
    7       1         rank, u8
    8       8*rank    dimensions, u64 little-endian each
    ...     8*prod    payload, row-major (C order)

Container file (``.svmc``) bundles named matrices with a JSON header::

    0       4         magic b"SVMC"
    4       2         format version, u16 little-endian
    6       8         header length in bytes, u64 little-endian
    14      n         UTF-8 JSON header (sorted keys, no whitespace)
    ...               one SVMX record per entry of header["arrays"], in order

Both encodings are byte-deterministic for identical inputs.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import FormatError

MATRIX_MAGIC = b"SVMX"
CONTAINER_MAGIC = b"SVMC"
FORMAT_VERSION = 1
DTYPE_F64 = 1


def encode_matrix(array):
    a = np.require(np.asarray(array, dtype="<f8"), requirements="C")
    if a.ndim > 255:
        raise FormatError("rank exceeds 255")
    head = MATRIX_MAGIC + struct.pack("<HBB", FORMAT_VERSION, DTYPE_F64, a.ndim)
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes(order="C")


def decode_matrix(buf, offset=0):
    """Decode one SVMX record starting at ``offset``.

    Returns the array and the offset just past the record.
    """
    if bytes(buf[offset:offset + 4]) != MATRIX_MAGIC:
        raise FormatError("bad matrix magic")
    version, tag, rank = struct.unpack_from("<HBB", buf, offset + 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported matrix format version {version}")
    if tag != DTYPE_F64:
        raise FormatError(f"unsupported element type tag {tag}")
    pos = offset + 8
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    end = pos + 8 * count
    if end > len(buf):
        raise FormatError("truncated matrix payload")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=pos)
    return data.reshape(shape).astype(np.float64), end


def write_matrix(path, array):
    with open(path, "wb") as fh:
        fh.write(encode_matrix(array))


def read_matrix(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    array, end = decode_matrix(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after matrix payload")
    return array


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def write_container(path, arrays, meta=None):
    """Write named arrays plus JSON-serializable metadata to ``path``."""
    names = list(arrays)
    header = {"arrays": names, "meta": meta or {}}
    hbytes = _canonical_json(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC + struct.pack("<HQ", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for name in names:
            fh.write(encode_matrix(arrays[name]))


def read_container(path):
    """Return ``(arrays, meta)`` from a container file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CONTAINER_MAGIC:
        raise FormatError(f"{path}: bad container magic")
    version, hlen = struct.unpack_from("<HQ", buf, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    pos = 14
    header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    arrays = {}
    for name in header["arrays"]:
        arrays[name], pos = decode_matrix(buf, pos)
    if pos != len(buf):
        raise FormatError(f"{path}: trailing bytes after last array")
    return arrays, header["meta"]


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
