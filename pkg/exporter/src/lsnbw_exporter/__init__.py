"""Checkpoint exporter: PyTorch weights in, LSNBW001 archives out."""

from .archive_io import MAGIC, archive_bytes, read_archive, write_archive
from .errors import ExportError, UnsupportedArchitectureError
from .export import SourceCheckpoint, export, load_checkpoint
from .manifest import ExportManifest, manifest_path_for, read_manifest, write_manifest
from .mapping import MappingRule, parse_mapping, read_mapping
from .parity import build_torch_model, verify_parity
from .probes import parse_probe, probe_bytes, read_probe, write_probe

__all__ = [
    "MAGIC", "archive_bytes", "read_archive", "write_archive",
    "ExportError", "UnsupportedArchitectureError",
    "SourceCheckpoint", "export", "load_checkpoint",
    "ExportManifest", "manifest_path_for", "read_manifest", "write_manifest",
    "MappingRule", "parse_mapping", "read_mapping",
    "build_torch_model", "verify_parity",
    "probe_bytes", "parse_probe", "read_probe", "write_probe",
]
