"""Portable weight archive ("LSNBW001") and the transfer-learning loaders.

Binary layout, little-endian throughout (normative; external tools must emit
byte-identical output for identical content):

    bytes 0..8    magic b"LSNBW001"
    u32           manifest entry count
    per entry:    u16 name length, UTF-8 name,
                  u8 ndim, ndim * u32 dims,
                  u64 byte offset into the payload region
    u64           payload byte length
    payload       float32 values, row-major, concatenated per entry

Offsets are ascending and non-overlapping as written; the loader accepts any
manifest order but requires the entries to tile the payload exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import FormatError, SpecError
from .init import kaiming_init
from .models import Model, ModelSpec, walk_shapes

MAGIC = b"LSNBW001"


@dataclass(frozen=True)
class ArchiveEntry:
    name: str
    shape: tuple
    offset: int

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) * 4 if self.shape else 4


class WeightArchive:
    """Immutable named float32 parameter set."""

    def __init__(self, entries: Sequence[ArchiveEntry], payload: bytes):
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise FormatError("archive entry names must be unique")
        spans = sorted((e.offset, e.offset + e.nbytes) for e in entries)
        pos = 0
        for start, end in spans:
            if start != pos:
                raise FormatError(f"archive offsets must tile the payload; gap or overlap at byte {start}")
            pos = end
        if pos != len(payload):
            raise FormatError(f"payload length {len(payload)} does not match manifest total {pos}")
        self.entries = list(entries)
        self.payload = bytes(payload)

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def tensor(self, name: str) -> np.ndarray:
        for e in self.entries:
            if e.name == name:
                raw = np.frombuffer(self.payload, dtype="<f4", count=e.nbytes // 4, offset=e.offset)
                return raw.reshape(e.shape).copy()
        raise KeyError(name)

    def shape_of(self, name: str) -> tuple:
        for e in self.entries:
            if e.name == name:
                return e.shape
        raise KeyError(name)

    @classmethod
    def from_arrays(cls, arrays: Iterable[tuple[str, np.ndarray]]) -> "WeightArchive":
        entries = []
        chunks = []
        offset = 0
        for name, arr in arrays:
            data = np.ascontiguousarray(arr, dtype="<f4")
            entries.append(ArchiveEntry(name, tuple(data.shape), offset))
            chunks.append(data.tobytes())
            offset += data.nbytes
        return cls(entries, b"".join(chunks))

    @classmethod
    def from_model(cls, model: Model) -> "WeightArchive":
        return cls.from_arrays((name, t.data) for name, t in model.parameters())

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<I", len(self.entries))]
        for e in self.entries:
            name = e.name.encode("utf-8")
            parts.append(struct.pack("<H", len(name)))
            parts.append(name)
            parts.append(struct.pack("<B", len(e.shape)))
            for dim in e.shape:
                parts.append(struct.pack("<I", dim))
            parts.append(struct.pack("<Q", e.offset))
        parts.append(struct.pack("<Q", len(self.payload)))
        parts.append(self.payload)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightArchive":
        if data[:8] != MAGIC:
            raise FormatError(f"bad archive magic {data[:8]!r}, expected {MAGIC!r}")
        try:
            pos = 8
            (count,) = struct.unpack_from("<I", data, pos)
            pos += 4
            entries = []
            for _ in range(count):
                (name_len,) = struct.unpack_from("<H", data, pos)
                pos += 2
                name = data[pos:pos + name_len].decode("utf-8")
                if len(data) < pos + name_len:
                    raise FormatError("archive truncated inside manifest")
                pos += name_len
                (ndim,) = struct.unpack_from("<B", data, pos)
                pos += 1
                dims = struct.unpack_from(f"<{ndim}I", data, pos)
                pos += 4 * ndim
                (offset,) = struct.unpack_from("<Q", data, pos)
                pos += 8
                entries.append(ArchiveEntry(name, tuple(dims), offset))
            (payload_len,) = struct.unpack_from("<Q", data, pos)
            pos += 8
        except struct.error as exc:
            raise FormatError(f"archive truncated inside manifest: {exc}") from exc
        payload = data[pos:pos + payload_len]
        if len(payload) != payload_len:
            raise FormatError(f"archive payload truncated: expected {payload_len} bytes, "
                              f"got {len(payload)}")
        return cls(entries, payload)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WeightArchive":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def save(model: Model, path) -> WeightArchive:
    """Write a model's parameters (rounded to float32) to an archive file."""
    arch = WeightArchive.from_model(model)
    arch.save(path)
    return arch


def _materialize(archive: WeightArchive, spec: ModelSpec, skip_head: bool) -> Model:
    walked = walk_shapes(spec)
    head_name = spec.head[0]
    missing = []
    mismatched = []
    for layer, (w_shape, b_shape) in walked["params"].items():
        if skip_head and layer == head_name:
            continue
        for suffix, shape in (("weight", w_shape), ("bias", b_shape)):
            pname = f"{layer}.{suffix}"
            try:
                found = archive.shape_of(pname)
            except KeyError:
                missing.append(pname)
                continue
            if found != shape:
                mismatched.append(f"{pname}: archive {found} vs spec {shape}")
    if missing:
        raise SpecError(f"archive is missing layers required by the spec: {sorted(missing)}")
    if mismatched:
        raise SpecError("archive/spec shape mismatch: " + "; ".join(sorted(mismatched)))

    model = Model(spec=spec)
    order = [n for n, _ in spec.image_branch] + [n for n, _ in spec.static_branch] + [head_name]
    for layer in order:
        if layer not in walked["params"]:
            continue
        if skip_head and layer == head_name:
            continue
        w = archive.tensor(f"{layer}.weight").astype(np.float64)
        b = archive.tensor(f"{layer}.bias").astype(np.float64)
        model.params[layer] = {
            "weight": Tensor(w, requires_grad=True, name=f"{layer}.weight"),
            "bias": Tensor(b, requires_grad=True, name=f"{layer}.bias"),
        }
    return model


def load_model(archive: WeightArchive, spec: ModelSpec) -> Model:
    """Exact restore of every layer, head included (32->64 bit upcast)."""
    return _materialize(archive, spec, skip_head=False)


def load_with_new_head(archive: WeightArchive, spec: ModelSpec, seed: int,
                       freeze: Sequence[str] = ()) -> Model:
    """Transfer-learning load: archive weights everywhere except a freshly
    He-initialized head (zero bias). Layer names in ``freeze`` are excluded
    from gradient updates; the default is full finetuning."""
    model = _materialize(archive, spec, skip_head=True)
    head_name = spec.head[0]
    w_shape, b_shape = walk_shapes(spec)["params"][head_name]
    model.params[head_name] = {
        "weight": Tensor(kaiming_init(w_shape, seed), requires_grad=True, name=f"{head_name}.weight"),
        "bias": Tensor(np.zeros(b_shape), requires_grad=True, name=f"{head_name}.bias"),
    }
    unknown = [f for f in freeze if f not in model.params]
    if unknown:
        raise SpecError(f"freeze list names unknown layers: {unknown}")
    for layer in freeze:
        model.params[layer]["weight"].requires_grad = False
        model.params[layer]["bias"].requires_grad = False
    return model


def restore_into(model: Model, archive: WeightArchive) -> None:
    """Copy archive values into an existing model's tensors, in place."""
    for name, tensor in model.parameters():
        tensor.data[...] = archive.tensor(name).astype(np.float64)
