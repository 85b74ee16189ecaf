"""Cross-framework inference parity.

Builds a PyTorch reference model for the architecture embedded in the
source checkpoint, loads the original weights into it, loads the exported
archive through the primary package, and compares logits on shared probe
inputs. Both sides compute in float64 from the same float32 parameters, so
genuine conversions agree to far better than the 1e-4 acceptance bound.
"""

import os
import tempfile

import numpy as np

from .errors import ExportError, UnsupportedArchitectureError
from .export import SourceCheckpoint, load_checkpoint
from .manifest import manifest_path_for, read_manifest
from .probes import parse_probe, probe_bytes


def _load_spec(spec_text: str):
    import lesionbench as lb
    fd, path = tempfile.mkstemp(suffix=".ini")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(spec_text)
        try:
            return lb.load_spec(path)
        except lb.LesionbenchError as exc:
            raise UnsupportedArchitectureError(
                f"embedded architecture is not a valid model spec: {exc}") from exc
    finally:
        os.unlink(path)


def build_torch_model(spec):
    """Mirror a lesionbench ModelSpec as an eval-mode float64 torch module."""
    import lesionbench as lb
    import torch
    from torch import nn
    from torch.nn import functional as F

    shapes = lb.walk_shapes(spec)["params"]

    class Mirror(nn.Module):
        def __init__(self):
            super().__init__()
            self.mods = nn.ModuleDict()
            for name, ((out_w, *rest), _bias) in shapes.items():
                if len(rest) == 3:  # conv kernel (out, in, k, k)
                    layer = _layer_def(spec, name)
                    self.mods[name] = nn.Conv2d(rest[0], out_w, rest[1],
                                                stride=layer.stride,
                                                padding=layer.padding)
                else:               # linear (out, in)
                    self.mods[name] = nn.Linear(rest[0], out_w)

        def _branch(self, x, layers):
            for name, layer in layers:
                if layer.kind == "conv":
                    x = self.mods[name](x)
                elif layer.kind == "maxpool":
                    x = F.max_pool2d(x, layer.window)
                elif layer.kind == "relu":
                    x = F.relu(x)
                elif layer.kind == "flatten":
                    x = x.reshape(x.shape[0], -1)
                elif layer.kind == "dropout":
                    pass  # parity runs in eval mode; dropout is identity
                elif layer.kind == "linear":
                    x = self.mods[name](x)
                else:
                    raise UnsupportedArchitectureError(
                        f"layer kind {layer.kind!r} has no torch equivalent here")
            return x

        def forward(self, image, static):
            x = self._branch(image.unsqueeze(0), spec.image_branch)
            if spec.static_branch:
                s = self._branch(static.unsqueeze(0), spec.static_branch)
                x = torch.cat([x, s], dim=1)
            return self.mods[spec.head[0]](x)

    model = Mirror().double()
    model.eval()
    return model


def _layer_def(spec, wanted):
    for name, layer in list(spec.image_branch) + list(spec.static_branch) + [spec.head]:
        if name == wanted:
            return layer
    raise ExportError(f"spec has no layer named {wanted!r}")


def _source_name_map(archive_path, layer_names):
    """archive tensor name -> checkpoint tensor name, manifest-aware.

    Falls back to identity for tensors the manifest does not mention (or
    when no manifest sits beside the archive)."""
    manifest_path = manifest_path_for(archive_path)
    if os.path.exists(manifest_path):
        inverted = {dest: src for src, dest in read_manifest(manifest_path).mapping.items()}
    else:
        inverted = {}
    return {tensor: inverted.get(tensor, tensor)
            for layer in layer_names
            for tensor in (f"{layer}.weight", f"{layer}.bias")}


def verify_parity(source_checkpoint, archive, n_probes: int = 16, seed: int = 0,
                  probes=None) -> float:
    """Max absolute logit difference between the source model (PyTorch) and
    the primary package running the exported archive."""
    import lesionbench as lb
    import torch

    ckpt = (source_checkpoint if isinstance(source_checkpoint, SourceCheckpoint)
            else load_checkpoint(source_checkpoint))
    if ckpt.spec_text is None:
        raise UnsupportedArchitectureError(
            "checkpoint does not embed an architecture description; "
            "parity needs one to build the reference model")
    spec = _load_spec(ckpt.spec_text)

    mirror = build_torch_model(spec)
    names = _source_name_map(archive, list(mirror.mods.keys()))
    missing = sorted(src for src in names.values() if src not in ckpt.tensors)
    if missing:
        raise ExportError("checkpoint is missing tensors for: " + ", ".join(missing))
    with torch.no_grad():
        for layer, module in mirror.mods.items():
            for attr in ("weight", "bias"):
                src = names[f"{layer}.{attr}"]
                getattr(module, attr).copy_(torch.from_numpy(
                    np.ascontiguousarray(ckpt.tensors[src], dtype=np.float64)))

    primary = lb.load_model(lb.WeightArchive.load(archive), spec)

    if probes is None:
        rng = np.random.default_rng(seed)
        probes = [(rng.uniform(0.0, 1.0, size=spec.input_image_shape),
                   rng.uniform(0.0, 1.0, size=spec.static_dim))
                  for _ in range(n_probes)]

    worst = 0.0
    for image, static in probes:
        # round-trip through the shared probe format so both frameworks see
        # exactly the same float32 stimulus
        image = parse_probe(probe_bytes(image)).astype(np.float64)
        static = parse_probe(probe_bytes(static)).astype(np.float64)
        with torch.no_grad():
            reference = float(mirror(torch.from_numpy(image),
                                     torch.from_numpy(static))[0, 0])
        candidate = float(lb.forward(primary, image, static).data[0])
        worst = max(worst, abs(reference - candidate))
    return worst
