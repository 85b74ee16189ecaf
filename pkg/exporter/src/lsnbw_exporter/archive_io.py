"""Reader/writer for the LSNBW001 weight-archive container.

Layout: 8-byte magic, u32 entry count, then per entry a u16 name length,
UTF-8 name, u8 ndim, ndim u32 dims, and a u64 payload-relative offset;
then a u64 payload length and the payload itself, float32 little-endian
row-major. All integers little-endian.
"""

import hashlib
import struct

import numpy as np

from .errors import ExportError

MAGIC = b"LSNBW001"


def write_archive(entries, path) -> str:
    """Write (name, array) pairs in order; returns the file's sha256 hex."""
    blob = archive_bytes(entries)
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()


def archive_bytes(entries) -> bytes:
    manifest = [MAGIC, struct.pack("<I", len(entries))]
    payload = bytearray()
    for name, array in entries:
        data = np.ascontiguousarray(array, dtype="<f4")
        encoded = name.encode("utf-8")
        manifest.append(struct.pack("<H", len(encoded)))
        manifest.append(encoded)
        manifest.append(struct.pack("<B", data.ndim))
        for dim in data.shape:
            manifest.append(struct.pack("<I", dim))
        manifest.append(struct.pack("<Q", len(payload)))
        payload.extend(data.tobytes())
    manifest.append(struct.pack("<Q", len(payload)))
    return b"".join(manifest) + bytes(payload)


def read_archive(path):
    """Read an archive into an ordered list of (name, float32 array)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ExportError(f"{path}: bad magic {data[:8]!r}, expected {MAGIC!r}")
    try:
        pos = 8
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        heads = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            (offset,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            heads.append((name, shape, offset))
        (payload_len,) = struct.unpack_from("<Q", data, pos)
        pos += 8
    except (struct.error, UnicodeDecodeError) as exc:
        raise ExportError(f"{path}: truncated or corrupt manifest: {exc}") from exc
    payload = data[pos:]
    if len(payload) != payload_len:
        raise ExportError(f"{path}: payload truncated: header says {payload_len} "
                          f"bytes, file holds {len(payload)}")
    out = []
    for name, shape, offset in heads:
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        if offset + nbytes > payload_len:
            raise ExportError(f"{path}: entry {name!r} extends past the payload")
        array = np.frombuffer(payload, dtype="<f4", count=nbytes // 4,
                              offset=offset).reshape(shape)
        out.append((name, array))
    return out
