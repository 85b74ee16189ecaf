"""Integrated-gradients attribution over image pixels, with rendering to
grayscale maps and an exact-reprocessing dump format.

phi_i = (x_i - b_i) * mean_k dpsi/dx_i at b + ((k-0.5)/steps)(x-b)

The path integral is approximated with the midpoint rule; psi is the
model's pre-sigmoid logit by default. Static features are not attributed:
they stay fixed at the sample's values along the whole path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .archive import WeightArchive
from .autodiff import Tape, Tensor, sigmoid
from .data import Sample
from .errors import ConfigError, DimensionError
from .models import Model, forward

AUTO_REFINE_STEPS = 512
COMPLETENESS_TOLERANCE = 0.01


@dataclass
class AttributionMap:
    phi: np.ndarray          # same shape as the input image
    completeness_gap: float  # |sum(phi) - (psi(x) - psi(b))|
    steps_used: int
    baseline_kind: str       # "black" or "custom"
    psi_delta: float         # psi(x) - psi(b)


def _psi(model: Model, image: np.ndarray, static: np.ndarray, target: str) -> float:
    logit = forward(model, image, static, train_mode=False)
    if target == "probability":
        return float(sigmoid(logit).data[0])
    return float(logit.data[0])


def _path_gradients(model: Model, x: np.ndarray, b: np.ndarray, static: np.ndarray,
                    steps: int, target: str) -> np.ndarray:
    total = np.zeros_like(x)
    for k in range(1, steps + 1):
        alpha = (k - 0.5) / steps
        point = Tensor(b + alpha * (x - b), requires_grad=True)
        with Tape() as tape:
            out = forward(model, point, static, train_mode=False)
            if target == "probability":
                out = sigmoid(out)
            tape.backward(out)
        total += point.grad
    return total / steps


def integrated_gradients(model: Model, sample: Sample, steps: int = 256,
                         baseline: Optional[np.ndarray] = None,
                         target: str = "logit",
                         auto_refine: bool = True) -> AttributionMap:
    """Midpoint-rule integrated gradients for one sample.

    With auto_refine on, the computation reruns at 512 steps whenever the
    completeness gap exceeds 1% of |psi(x) - psi(b)|.
    """
    if steps < 2:
        raise ConfigError(f"integrated gradients needs steps >= 2, got {steps}")
    if target not in ("logit", "probability"):
        raise ConfigError(f"target must be logit or probability, got {target!r}")
    x = sample.image
    if baseline is None:
        b = np.zeros_like(x)
        kind = "black"
    else:
        b = np.asarray(baseline, dtype=np.float64)
        if b.shape != x.shape:
            raise DimensionError(f"baseline shape {b.shape} does not match image {x.shape}")
        kind = "custom"

    # parameters are spectators here; freeze them so the tape only tracks pixels
    flags = [(t, t.requires_grad) for _, t in model.parameters()]
    for t, _ in flags:
        t.requires_grad = False
    try:
        psi_x = _psi(model, x, sample.static, target)
        psi_b = _psi(model, b, sample.static, target)
        delta = psi_x - psi_b
        used = steps
        avg_grad = _path_gradients(model, x, b, sample.static, used, target)
        phi = (x - b) * avg_grad
        gap = abs(float(phi.sum()) - delta)
        if auto_refine and used < AUTO_REFINE_STEPS and gap > COMPLETENESS_TOLERANCE * abs(delta):
            used = AUTO_REFINE_STEPS
            avg_grad = _path_gradients(model, x, b, sample.static, used, target)
            phi = (x - b) * avg_grad
            gap = abs(float(phi.sum()) - delta)
    finally:
        for t, flag in flags:
            t.requires_grad = flag
    return AttributionMap(phi=phi, completeness_gap=gap, steps_used=used,
                          baseline_kind=kind, psi_delta=delta)


def render_map(amap: AttributionMap, mode: str = "absolute") -> np.ndarray:
    """Collapse channels and normalize to a [0,1] grayscale (H, W) image.

    absolute: per-pixel sum of |phi| over channels, min-max scaled.
    signed: per-pixel channel sum, symmetric about mid-gray 0.5.
    An all-zero map renders as uniform mid-gray.
    """
    if mode == "absolute":
        plane = np.abs(amap.phi).sum(axis=0)
        lo, hi = float(plane.min()), float(plane.max())
        if hi == lo:
            return np.full(plane.shape, 0.5)
        return (plane - lo) / (hi - lo)
    if mode == "signed":
        plane = amap.phi.sum(axis=0)
        bound = float(np.abs(plane).max())
        if bound == 0.0:
            return np.full(plane.shape, 0.5)
        return 0.5 + plane / (2.0 * bound)
    raise ConfigError(f"render mode must be absolute or signed, got {mode!r}")


def write_pgm(image: np.ndarray, path) -> None:
    """8-bit binary portable graymap (P5) from a [0,1] (H, W) array."""
    if image.ndim != 2:
        raise DimensionError(f"PGM writer expects (H, W), got {image.shape}")
    h, w = image.shape
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"255":
        raise ConfigError(f"{path} is not an 8-bit binary PGM")
    w, h = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=h * w)
    return pixels.reshape(h, w).astype(np.float64) / 255.0


def dump_phi(amap: AttributionMap, path) -> None:
    """Raw phi in the weight-archive container, for exact reprocessing."""
    WeightArchive.from_arrays([("phi", amap.phi)]).save(path)


def load_phi(path) -> np.ndarray:
    return WeightArchive.load(path).tensor("phi").astype(np.float64)
