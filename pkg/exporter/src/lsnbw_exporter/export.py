"""Checkpoint-to-archive conversion."""

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import archive_io
from .errors import ExportError
from .manifest import ExportManifest, manifest_path_for, write_manifest
from .mapping import read_mapping


@dataclass
class SourceCheckpoint:
    name: str
    tensors: dict                      # source layer name -> numpy array, ordered
    spec_text: Optional[str] = None    # architecture description, when embedded
    path: str = ""


def load_checkpoint(path) -> SourceCheckpoint:
    """Load a PyTorch checkpoint (bare state_dict or a wrapper dict with
    'state_dict', optional 'name' and 'spec' entries) or an existing LSNBW
    archive for re-export."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == archive_io.MAGIC:
        tensors = dict(archive_io.read_archive(path))
        return SourceCheckpoint(name=os.path.basename(str(path)), tensors=tensors,
                                path=str(path))

    import torch
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ExportError(f"{path}: not a readable checkpoint: {exc}") from exc

    name = os.path.splitext(os.path.basename(str(path)))[0]
    spec_text = None
    if isinstance(payload, dict) and "state_dict" in payload:
        state = payload["state_dict"]
        name = payload.get("name", name)
        spec_text = payload.get("spec")
    else:
        state = payload
    if not isinstance(state, dict) or not state:
        raise ExportError(f"{path}: checkpoint holds no tensors")

    tensors = {}
    for key, value in state.items():
        if isinstance(value, torch.Tensor):
            tensors[key] = value.detach().cpu().numpy()
        else:
            tensors[key] = np.asarray(value)
    return SourceCheckpoint(name=name, tensors=tensors, spec_text=spec_text,
                            path=str(path))


_FLOAT_KINDS = "f"


def export(source_checkpoint, mapping_file, out_path) -> ExportManifest:
    """Convert the mapped tensors of a checkpoint into an LSNBW001 archive.

    Entries are written in mapping-file order, so re-exporting an archive
    with an identity mapping reproduces it byte for byte. Every problem is
    collected before raising, one line per issue.
    """
    ckpt = (source_checkpoint if isinstance(source_checkpoint, SourceCheckpoint)
            else load_checkpoint(source_checkpoint))
    rules = read_mapping(mapping_file)

    issues = []
    entries = []
    for rule in rules:
        if rule.source not in ckpt.tensors:
            issues.append(f"unknown source layer {rule.source!r}")
            continue
        array = ckpt.tensors[rule.source]
        if array.dtype.kind not in _FLOAT_KINDS:
            issues.append(f"unsupported layer kind for {rule.source!r}: "
                          f"dtype {array.dtype} is not a floating tensor")
            continue
        if rule.shape is not None and tuple(array.shape) != rule.shape:
            issues.append(f"shape mismatch for {rule.source!r}: checkpoint "
                          f"{tuple(array.shape)} vs mapping {rule.shape}")
            continue
        entries.append((rule.dest, array))
    if issues:
        raise ExportError("export failed:\n  " + "\n  ".join(issues))

    sha = archive_io.write_archive(entries, out_path)
    manifest = ExportManifest(
        source_model=ckpt.name,
        archive_sha256=sha,
        mapping={rule.source: rule.dest for rule in rules},
        shapes={dest: tuple(np.asarray(a).shape) for dest, a in entries})
    write_manifest(manifest, manifest_path_for(out_path))
    return manifest
