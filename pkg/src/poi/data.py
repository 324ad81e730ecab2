"""Synthetic structured dataset with controllable label noise.

Every class renders its active action units as deterministic oriented glyphs:
eye AUs in the upper image half, mouth AUs in the lower half, with the left
and right quadrants mirroring each other. An ambiguous fraction of samples
takes its lower half from a different class (label follows the upper half),
creating genuinely conflicting evidence. Label noise flips an exact fraction
of training labels to uniformly drawn wrong classes; the clean label is kept
alongside for evaluation only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import DataSpec
from .priors import AUPriorTable

CACHE_MAGIC = b"POI1"
CACHE_VERSION = 1

GLYPH_INTENSITY = 1.0


@dataclass
class Sample:
    image: np.ndarray          # [1, H, W] float64 in [0, 1]
    label: int                 # training label, possibly noise-flipped
    clean_label: int           # generator ground truth
    eye_active: np.ndarray     # bool [6], ground-truth upper-half AUs
    mouth_active: np.ndarray   # bool [7], ground-truth lower-half AUs
    ambiguity: float           # 1.0 when the halves come from different classes


def _slot_pattern(kind: int, side: int) -> np.ndarray:
    """Deterministic stroke drawn inside a side x side box."""
    p = np.zeros((side, side))
    mid = side // 2
    idx = np.arange(side)
    if kind == 0:
        p[mid, :] = GLYPH_INTENSITY
    elif kind == 1:
        p[:, mid] = GLYPH_INTENSITY
    elif kind == 2:
        p[idx, idx] = GLYPH_INTENSITY
    elif kind == 3:
        p[idx, side - 1 - idx] = GLYPH_INTENSITY
    elif kind == 4:
        p[mid, :] = GLYPH_INTENSITY
        p[:, mid] = GLYPH_INTENSITY
    elif kind == 5:
        p[idx, idx] = GLYPH_INTENSITY
        p[idx, side - 1 - idx] = GLYPH_INTENSITY
    else:
        p[0, :] = p[-1, :] = GLYPH_INTENSITY
        p[:, 0] = p[:, -1] = GLYPH_INTENSITY
    return p


def glyph(region: str, au_index: int, quadrant_side: int) -> np.ndarray:
    """Template for one AU: a stroke in its own slot of a 3x3 quadrant grid.

    Slots are disjoint, so matched-filter responses of different AUs in the
    same quadrant never overlap.
    """
    if region not in ("eye", "mouth"):
        raise ValueError(f"unknown region {region!r}")
    limit = 6 if region == "eye" else 7
    if not 0 <= au_index < limit:
        raise ValueError(f"{region} AU index {au_index} out of range")
    slot = quadrant_side // 3
    if slot < 4:
        raise ValueError(f"quadrant side {quadrant_side} too small for glyph slots")
    offset = (quadrant_side - 3 * slot) // 2
    canvas = np.zeros((quadrant_side, quadrant_side))
    row, col = divmod(au_index, 3)
    inner = _slot_pattern(au_index % 7, slot - 2)
    r0 = offset + row * slot + 1
    c0 = offset + col * slot + 1
    canvas[r0:r0 + slot - 2, c0:c0 + slot - 2] = inner
    return canvas


def _class_canvases(table: AUPriorTable, region: str, quadrant_side: int) -> np.ndarray:
    """[C, q, q] summed glyph canvases per class for one region."""
    active = table.activation_matrix(region)
    order_len = active.shape[1]
    templates = np.stack([glyph(region, m, quadrant_side) for m in range(order_len)])
    return np.einsum("cm,mxy->cxy", active.astype(float), templates)


def generate_dataset(
    spec: DataSpec,
    table: AUPriorTable,
    seed,
    per_class: int,
) -> list[Sample]:
    """Deterministic balanced sample list; identical (spec, seed) gives identical bytes."""
    if len(table.expressions) != len(spec.classes):
        raise ValueError("table does not match the configured class roster")
    rng = np.random.default_rng(seed)
    h = spec.image_size
    q = h // 2
    eye_canvas = _class_canvases(table, "eye", q)
    mouth_canvas = _class_canvases(table, "mouth", q)
    eye_active = table.activation_matrix("eye")
    mouth_active = table.activation_matrix("mouth")
    num_classes = len(spec.classes)

    samples: list[Sample] = []
    for c in range(num_classes):
        n_amb = int(spec.ambiguity * per_class + 0.5) if num_classes > 1 else 0
        flags = np.zeros(per_class, dtype=bool)
        if n_amb:
            flags[rng.choice(per_class, size=n_amb, replace=False)] = True
        for j in range(per_class):
            lower_c = c
            if flags[j]:
                others = [k for k in range(num_classes) if k != c]
                lower_c = others[rng.integers(len(others))]
            amp = rng.uniform(0.75, 1.0)
            img = np.zeros((h, h))
            img[:q, q:] = eye_canvas[c]
            img[:q, :q] = eye_canvas[c][:, ::-1]
            img[q:, q:] = mouth_canvas[lower_c]
            img[q:, :q] = mouth_canvas[lower_c][:, ::-1]
            img *= amp
            if spec.noise_sigma > 0:
                img += rng.normal(0.0, spec.noise_sigma, size=(h, h))
            np.clip(img, 0.0, 1.0, out=img)
            samples.append(Sample(
                image=img[None, :, :],
                label=c,
                clean_label=c,
                eye_active=eye_active[c].copy(),
                mouth_active=mouth_active[lower_c].copy(),
                ambiguity=1.0 if flags[j] else 0.0,
            ))
    return samples


def inject_label_noise(samples: Sequence[Sample], ratio: float, num_classes: int, seed) -> list[Sample]:
    """Flip exactly round(ratio * N) labels to uniformly drawn wrong classes."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"noise ratio must be in [0, 1), got {ratio}")
    out = [replace(s) for s in samples]
    n_flip = int(ratio * len(out) + 0.5)
    if n_flip == 0:
        return out
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(out), size=n_flip, replace=False)
    for i in chosen:
        others = [k for k in range(num_classes) if k != out[i].clean_label]
        out[i] = replace(out[i], label=others[rng.integers(len(others))])
    return out


def subject_left_quadrants(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(eye, mouth) quadrants on the subject's left side (image right)."""
    h = image.shape[-1]
    q = h // 2
    return image[0, :q, q:], image[0, q:, q:]


def stack_images(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.image for s in samples])


def labels_of(samples: Sequence[Sample], clean: bool = False) -> np.ndarray:
    return np.array([s.clean_label if clean else s.label for s in samples], dtype=np.int64)


def augment_batch(images: np.ndarray, rng: np.random.Generator, max_shift: int = 2) -> np.ndarray:
    """Horizontal flip (mirrors the quadrant pairs) plus a small translation."""
    out = images.copy()
    bsz = out.shape[0]
    flips = rng.random(bsz) < 0.5
    shifts = rng.integers(-max_shift, max_shift + 1, size=(bsz, 2))
    for i in range(bsz):
        img = out[i]
        if flips[i]:
            img = img[:, :, ::-1]
        dy, dx = int(shifts[i, 0]), int(shifts[i, 1])
        if dy or dx:
            shifted = np.zeros_like(img)
            h, w = img.shape[1], img.shape[2]
            ys, yd = (dy, 0) if dy >= 0 else (0, -dy)
            xs, xd = (dx, 0) if dx >= 0 else (0, -dx)
            shifted[:, ys:h - yd, xs:w - xd] = img[:, yd:h - ys, xd:w - xs]
            img = shifted
        out[i] = img
    return out


# ---------------------------------------------------------------------------
# binary cache
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIII")   # magic, version, C, N, H, W
_RECORD_TAIL = struct.Struct("<BBHf")  # label, clean_label, AU bitmask, ambiguity


class CacheFormatError(RuntimeError):
    """Cache file is malformed or from an unknown version."""


def _bitmask(sample: Sample) -> int:
    mask = 0
    for i, bit in enumerate(sample.eye_active):
        mask |= int(bit) << i
    for i, bit in enumerate(sample.mouth_active):
        mask |= int(bit) << (6 + i)
    return mask


def save_cache(path: str | Path, samples: Sequence[Sample], num_classes: int) -> None:
    """Single-channel binary cache: header plus fixed-size per-sample records."""
    if not samples:
        raise ValueError("refusing to write an empty cache")
    h, w = samples[0].image.shape[1], samples[0].image.shape[2]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, num_classes, len(samples), h, w))
        for s in samples:
            if s.image.shape != (1, h, w):
                raise ValueError("cache requires uniform single-channel images")
            fh.write(s.image[0].astype("<f4").tobytes(order="C"))
            fh.write(_RECORD_TAIL.pack(s.label, s.clean_label, _bitmask(s), s.ambiguity))


def load_cache(path: str | Path) -> tuple[list[Sample], int]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CacheFormatError(f"{path}: truncated header")
    magic, version, num_classes, count, h, w = _HEADER.unpack_from(raw, 0)
    if magic != CACHE_MAGIC:
        raise CacheFormatError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheFormatError(f"{path}: unsupported version {version}")
    record_size = 4 * h * w + _RECORD_TAIL.size
    expected = _HEADER.size + count * record_size
    if len(raw) != expected:
        raise CacheFormatError(f"{path}: {len(raw)} bytes, expected {expected}")
    samples = []
    offset = _HEADER.size
    for _ in range(count):
        image = np.frombuffer(raw, dtype="<f4", count=h * w, offset=offset).astype(np.float64)
        offset += 4 * h * w
        label, clean, mask, ambiguity = _RECORD_TAIL.unpack_from(raw, offset)
        offset += _RECORD_TAIL.size
        samples.append(Sample(
            image=image.reshape(1, h, w),
            label=label,
            clean_label=clean,
            eye_active=np.array([(mask >> i) & 1 for i in range(6)], dtype=bool),
            mouth_active=np.array([(mask >> (6 + i)) & 1 for i in range(7)], dtype=bool),
            ambiguity=float(ambiguity),
        ))
    return samples, num_classes
