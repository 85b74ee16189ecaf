"""Probe-input files: the format both frameworks read during parity checks.

8-byte header of four little-endian u16 values (ndim, then up to three
dims, unused slots zero) followed by the float32 little-endian payload in
row-major order. Tensors of 1 to 3 dimensions are supported, which covers
static-feature vectors and (C, H, W) images.
"""

import struct

import numpy as np

from .errors import ExportError


def probe_bytes(array) -> bytes:
    data = np.ascontiguousarray(array, dtype="<f4")
    if not 1 <= data.ndim <= 3:
        raise ExportError(f"probe tensors must have 1 to 3 dims, got {data.ndim}")
    dims = list(data.shape) + [0] * (3 - data.ndim)
    return struct.pack("<4H", data.ndim, *dims) + data.tobytes()


def parse_probe(blob: bytes) -> np.ndarray:
    if len(blob) < 8:
        raise ExportError("probe file shorter than its 8-byte header")
    ndim, d0, d1, d2 = struct.unpack_from("<4H", blob, 0)
    if not 1 <= ndim <= 3:
        raise ExportError(f"probe header declares {ndim} dims, expected 1 to 3")
    shape = (d0, d1, d2)[:ndim]
    count = int(np.prod(shape, dtype=np.int64))
    if len(blob) != 8 + 4 * count:
        raise ExportError(f"probe payload is {len(blob) - 8} bytes, "
                          f"shape {shape} needs {4 * count}")
    return np.frombuffer(blob, dtype="<f4", offset=8).reshape(shape).copy()


def write_probe(array, path) -> None:
    with open(path, "wb") as fh:
        fh.write(probe_bytes(array))


def read_probe(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_probe(fh.read())
