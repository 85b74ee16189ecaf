"""Dataset ingestion, stratified splitting, augmentation, and the synthetic
lesion generator used for desk-scale experiments.

A sample couples a [0,1]-valued 3xHxW image with three static features
(age_norm, sex_code, site_code) and a binary label (1 = melanoma-like).
The on-disk layout is a directory of 8-bit RGB raster images plus a CSV
metadata table with header image_name,age,sex,site,target; synthetic
datasets are written in the same layout so downstream code is
source-agnostic.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DataError

SITES = ("torso", "lower extremity", "upper extremity",
         "head/neck", "palms/soles", "oral/genital")

# per-site totals from the source dataset's distribution table, used as
# sampling priors by the synthetic generator
_SITE_COUNTS = (17106 + 257, 8293 + 124, 4872 + 111, 1781 + 74, 370 + 5, 120 + 4)

_METADATA_HEADER = "image_name,age,sex,site,target"


@dataclass(frozen=True)
class Sample:
    id: str
    image: np.ndarray   # (3, H, W) float64 in [0, 1]
    static: np.ndarray  # (age_norm, sex_code, site_code)
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"sample {self.id}: label must be 0 or 1, got {self.label}")
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DataError(f"sample {self.id}: image must be (3, H, W), got {self.image.shape}")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise DataError(f"sample {self.id}: image values must lie in [0, 1]")
        if self.static.shape != (3,) or not np.isfinite(self.static).all():
            raise DataError(f"sample {self.id}: static features must be 3 finite reals")


@dataclass(frozen=True)
class AugmentationPolicy:
    rotation_max_deg: float = 25.0
    horizontal_flip_p: float = 0.5
    vertical_flip_p: float = 0.5
    resize_scale_range: tuple[float, float] = (0.8, 1.0)
    brightness_delta_max: float = 0.1
    saturation_delta_max: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("horizontal_flip_p", "vertical_flip_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.resize_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"resize_scale_range must satisfy 0 < lo <= hi <= 1, got {self.resize_scale_range}")
        if self.rotation_max_deg < 0 or self.brightness_delta_max < 0 or self.saturation_delta_max < 0:
            raise ConfigError("augmentation magnitudes must be non-negative")


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    valid: list
    test: list


def identity_policy(seed: int = 0) -> AugmentationPolicy:
    """A policy whose every transform is a no-op (useful in tests)."""
    return AugmentationPolicy(rotation_max_deg=0.0, horizontal_flip_p=0.0,
                              vertical_flip_p=0.0, resize_scale_range=(1.0, 1.0),
                              brightness_delta_max=0.0, saturation_delta_max=0.0,
                              seed=seed)


# ---------------------------------------------------------------------------
# ingestion

def _encode_static(age: str, sex: str, site: str, row_id: str) -> np.ndarray:
    try:
        age_norm = min(max(float(age) / 100.0, 0.0), 1.0)
    except ValueError:
        raise DataError(f"row {row_id}: age {age!r} is not numeric") from None
    sex_l = sex.strip().lower()
    if sex_l == "female":
        sex_code = 0.0
    elif sex_l == "male":
        sex_code = 1.0
    else:
        raise DataError(f"row {row_id}: sex must be 'female' or 'male', got {sex!r}")
    site_l = site.strip().lower()
    if site_l not in SITES:
        raise DataError(f"row {row_id}: unknown site {site!r}; expected one of {SITES}")
    site_code = SITES.index(site_l) / 5.0
    return np.array([age_norm, sex_code, site_code], dtype=np.float64)


def decode_static(static: np.ndarray) -> tuple[float, str, str]:
    """Inverse of the categorical encoding: (age_years, sex, site)."""
    sex = "male" if static[1] >= 0.5 else "female"
    site = SITES[int(round(static[2] * 5.0))]
    return float(static[0]) * 100.0, sex, site


def load_image(path, image_size: Optional[int] = None) -> np.ndarray:
    """Decode an 8-bit RGB raster file to a (3, H, W) array in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        if image_size is not None and rgb.size != (image_size, image_size):
            rgb = rgb.resize((image_size, image_size), Image.BILINEAR)
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def ingest(image_dir, metadata_file, image_size: Optional[int] = None) -> list[Sample]:
    """Read a dataset directory: one Sample per metadata row.

    The metadata file is UTF-8 CSV with header exactly
    image_name,age,sex,site,target. Image files are looked up as
    <image_dir>/<image_name> with a .ppm/.png/.jpg extension fallback when
    image_name has no suffix.
    """
    with open(metadata_file, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != _METADATA_HEADER:
        raise DataError(f"metadata header must be {_METADATA_HEADER!r}, "
                        f"got {lines[0] if lines else ''!r}")
    samples = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise DataError(f"malformed metadata row: {ln!r}")
        name, age, sex, site, target = parts
        if target not in ("0", "1"):
            raise DataError(f"row {name}: target must be 0 or 1, got {target!r}")
        static = _encode_static(age, sex, site, name)
        path = os.path.join(image_dir, name)
        if not os.path.splitext(name)[1]:
            for ext in (".ppm", ".png", ".jpg", ".jpeg"):
                if os.path.exists(path + ext):
                    path = path + ext
                    break
        if not os.path.exists(path):
            raise DataError(f"row {name}: image file not found under {image_dir}")
        samples.append(Sample(id=name, image=load_image(path, image_size),
                              static=static, label=int(target)))
    return samples


# ---------------------------------------------------------------------------
# splitting

def _partition_counts(n: int) -> tuple[int, int, int]:
    # largest-remainder apportionment of n over (0.6, 0.2, 0.2)
    exact = (0.6 * n, 0.2 * n, 0.2 * n)
    base = [int(np.floor(e)) for e in exact]
    short = n - sum(base)
    remainders = sorted(range(3), key=lambda i: (-(exact[i] - base[i]), i))
    for i in range(short):
        base[remainders[i]] += 1
    return tuple(base)


def split(samples: Sequence[Sample], seed: int) -> DatasetSplit:
    """Deterministic stratified 60/20/20 split; returns id lists."""
    by_label = {0: [], 1: []}
    for s in samples:
        by_label[s.label].append(s.id)
    for label, ids in by_label.items():
        if len(ids) < 5:
            raise DataError(f"stratified split needs >= 5 samples per class; "
                            f"class {label} has {len(ids)}")
    rng = np.random.default_rng(seed)
    train, valid, test = [], [], []
    for label in (0, 1):
        ids = by_label[label]
        perm = rng.permutation(len(ids))
        shuffled = [ids[i] for i in perm]
        n_train, n_valid, n_test = _partition_counts(len(ids))
        train += shuffled[:n_train]
        valid += shuffled[n_train:n_train + n_valid]
        test += shuffled[n_train + n_valid:]
    return DatasetSplit(train=train, valid=valid, test=test)


def select(samples: Sequence[Sample], ids: Sequence[str]) -> list[Sample]:
    by_id = {s.id: s for s in samples}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"ids not present in the sample set: {missing[:5]}")
    return [by_id[i] for i in ids]


def write_split(split_: DatasetSplit, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,partition\n")
        for part_name in ("train", "valid", "test"):
            for sid in getattr(split_, part_name):
                fh.write(f"{sid},{part_name}\n")


def read_split(path) -> DatasetSplit:
    parts = {"train": [], "valid": [], "test": []}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "id,partition":
            raise DataError(f"split file header must be 'id,partition', got {header!r}")
        for line in fh:
            sid, part = line.strip().split(",")
            if part not in parts:
                raise DataError(f"unknown partition {part!r} in split file")
            parts[part].append(sid)
    return DatasetSplit(**parts)


# ---------------------------------------------------------------------------
# augmentation

def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, :, ::-1])


def vflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1, :])


def _bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Channel-wise bilinear resize with half-pixel-centered sampling."""
    c, h, w = image.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    out = np.empty((c, out_h, out_w), dtype=np.float64)
    for ch in range(c):
        plane = image[ch]
        top = plane[np.ix_(y0, x0)] * (1 - wx) + plane[np.ix_(y0, x1)] * wx
        bot = plane[np.ix_(y1, x0)] * (1 - wx) + plane[np.ix_(y1, x1)] * wx
        out[ch] = top * (1 - wy) + bot * wy
    return out


def rgb_to_hsv(image: np.ndarray) -> np.ndarray:
    """(3,H,W) RGB in [0,1] -> HSV with H in [0,1)."""
    r, g, b = image[0], image[1], image[2]
    maxc = image.max(axis=0)
    minc = image.min(axis=0)
    v = maxc
    span = maxc - minc
    s = np.where(maxc > 0, span / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(span > 0, span, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(span > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v])


def hsv_to_rgb(image: np.ndarray) -> np.ndarray:
    h, s, v = image[0], image[1], image[2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def _augment_rng(policy: AugmentationPolicy, sample_id: str, epoch_nonce: int) -> np.random.Generator:
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([policy.seed, *words, epoch_nonce]))


def augment(sample: Sample, policy: AugmentationPolicy, epoch_nonce: int) -> Sample:
    """Randomly perturb the image; label and static features pass through.

    The random stream is a pure function of (policy.seed, sample.id,
    epoch_nonce), so augmentation is reproducible across processes. All
    eight random draws happen unconditionally to keep streams aligned
    between policies that disable different transforms.
    """
    rng = _augment_rng(policy, sample.id, epoch_nonce)
    angle = rng.uniform(-policy.rotation_max_deg, policy.rotation_max_deg)
    scale = rng.uniform(policy.resize_scale_range[0], policy.resize_scale_range[1])
    off_y = rng.uniform(0.0, 1.0)
    off_x = rng.uniform(0.0, 1.0)
    h_coin = rng.uniform(0.0, 1.0)
    v_coin = rng.uniform(0.0, 1.0)
    b_delta = rng.uniform(-policy.brightness_delta_max, policy.brightness_delta_max)
    s_delta = rng.uniform(-policy.saturation_delta_max, policy.saturation_delta_max)

    image = sample.image
    if angle != 0.0:
        image = ndimage.rotate(image, angle, axes=(2, 1), reshape=False,
                               order=1, mode="reflect")
    _, h, w = image.shape
    crop_h = max(1, int(round(scale * h)))
    crop_w = max(1, int(round(scale * w)))
    if (crop_h, crop_w) != (h, w):
        top = int(round(off_y * (h - crop_h)))
        left = int(round(off_x * (w - crop_w)))
        image = image[:, top:top + crop_h, left:left + crop_w]
        image = _bilinear_resize(image, h, w)
    if h_coin < policy.horizontal_flip_p:
        image = hflip(image)
    if v_coin < policy.vertical_flip_p:
        image = vflip(image)
    if b_delta != 0.0:
        image = image + b_delta
    if s_delta != 0.0:
        hsv = rgb_to_hsv(np.clip(image, 0.0, 1.0))
        hsv[1] = np.clip(hsv[1] * (1.0 + s_delta), 0.0, 1.0)
        image = hsv_to_rgb(hsv)
    image = np.clip(image, 0.0, 1.0)
    return Sample(id=sample.id, image=np.ascontiguousarray(image),
                  static=sample.static, label=sample.label)


# ---------------------------------------------------------------------------
# synthetic generator

def _lesion_image(rng: np.random.Generator, size: int, ragged: bool) -> np.ndarray:
    """Blob on a skin-toned background. Benign samples get a smooth
    near-elliptical boundary; positives get a ragged (radially noisy)
    boundary with a mild color asymmetry across the lesion."""
    skin = np.array([0.80, 0.60, 0.52]) + rng.uniform(-0.04, 0.04, size=3)
    noise = rng.uniform(-0.02, 0.02, size=(3, size, size))
    bg = skin[:, None, None] + noise

    cy = size / 2.0 + rng.uniform(-0.06, 0.06) * size
    cx = size / 2.0 + rng.uniform(-0.06, 0.06) * size
    ry = rng.uniform(0.22, 0.34) * size
    rx = rng.uniform(0.22, 0.34) * size
    theta = rng.uniform(0.0, np.pi)

    yy, xx = np.mgrid[0:size, 0:size]
    dy = yy - cy
    dx = xx - cx
    rot_y = -np.sin(theta) * dx + np.cos(theta) * dy
    rot_x = np.cos(theta) * dx + np.sin(theta) * dy
    u = np.sqrt((rot_x / rx) ** 2 + (rot_y / ry) ** 2)
    phi = np.arctan2(rot_y / ry, rot_x / rx)

    boundary = np.ones_like(u)
    # one gentle low-frequency wobble keeps benign blobs from being perfect ellipses
    amp0, phase0 = rng.uniform(0.01, 0.03), rng.uniform(0.0, 2 * np.pi)
    boundary = boundary + amp0 * np.cos(2 * phi + phase0)
    if ragged:
        for k in (5, 7, 9, 11):
            amp = rng.uniform(0.05, 0.11)
            phase = rng.uniform(0.0, 2 * np.pi)
            boundary = boundary + amp * np.cos(k * phi + phase)
    else:
        rng.uniform(0.05, 0.11, size=4)
        rng.uniform(0.0, 2 * np.pi, size=4)

    edge = 0.10 if ragged else 0.16
    alpha = np.clip((boundary - u) / edge + 0.5, 0.0, 1.0)

    lesion = np.array([0.36, 0.23, 0.16]) + rng.uniform(-0.05, 0.05, size=3)
    tint = np.zeros((3, size, size))
    if ragged:
        grad_dir = rng.uniform(0.0, 2 * np.pi)
        ramp = (np.cos(grad_dir) * rot_x / max(rx, 1e-9) +
                np.sin(grad_dir) * rot_y / max(ry, 1e-9))
        shift = rng.uniform(0.05, 0.09, size=3) * np.array([1.0, -0.5, -1.0])
        tint = shift[:, None, None] * ramp[None, :, :]
    else:
        rng.uniform(0.0, 2 * np.pi)
        rng.uniform(0.05, 0.09, size=3)
    fg = lesion[:, None, None] + tint
    img = bg * (1.0 - alpha[None, :, :]) + fg * alpha[None, :, :]
    return np.clip(img, 0.0, 1.0)


def synth_generate(n: int, positive_fraction: float, seed: int,
                   image_size: int = 40) -> list[Sample]:
    """Deterministic synthetic dataset: exactly round(n * positive_fraction)
    positives, site priors proportional to the source distribution table."""
    if n < 10:
        raise ConfigError(f"synthetic dataset needs n >= 10, got {n}")
    if not 0.0 < positive_fraction < 1.0:
        raise ConfigError(f"positive_fraction must lie in (0, 1), got {positive_fraction}")
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * positive_fraction))
    labels = np.array([1] * n_pos + [0] * (n - n_pos))
    rng.shuffle(labels)
    site_p = np.array(_SITE_COUNTS, dtype=np.float64)
    site_p /= site_p.sum()
    samples = []
    for i in range(n):
        label = int(labels[i])
        image = _lesion_image(rng, image_size, ragged=bool(label))
        if label:
            age_years = int(rng.integers(35, 91))
        else:
            age_years = int(rng.integers(20, 81))
        sex_code = float(rng.integers(0, 2))
        site_code = int(rng.choice(6, p=site_p)) / 5.0
        static = np.array([age_years / 100.0, sex_code, site_code])
        samples.append(Sample(id=f"synth{i:05d}", image=image, static=static, label=label))
    return samples


# ---------------------------------------------------------------------------
# on-disk layout

def _write_ppm(image: np.ndarray, path) -> None:
    c, h, w = image.shape
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.transpose(1, 2, 0).tobytes())


def write_dataset(samples: Sequence[Sample], out_dir) -> None:
    """Write samples in the ingest layout: images/<id>.ppm + metadata.csv."""
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)
    lines = [_METADATA_HEADER + "\n"]
    for s in samples:
        _write_ppm(s.image, os.path.join(image_dir, f"{s.id}.ppm"))
        age_years, sex, site = decode_static(s.static)
        lines.append(f"{s.id},{age_years:g},{sex},{site},{s.label}\n")
    with open(os.path.join(out_dir, "metadata.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def read_dataset(root_dir, image_size: Optional[int] = None) -> list[Sample]:
    return ingest(os.path.join(root_dir, "images"),
                  os.path.join(root_dir, "metadata.csv"), image_size=image_size)
