"""Domain types shared by the fusion, association and assessment code.

All image math runs on float64 grids in [0, 1]; 8-bit quantization happens
only at the I/O boundary. Every type freezes its array on construction, so
instances are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

__all__ = [
    "GrayImage",
    "ColorImage",
    "HeatMap",
    "InterestMask",
    "InstanceMap",
    "FeatureStack",
    "to_luminance",
    "split_ycbcr",
    "merge_ycbcr",
    "upscale_nearest",
]


def _frozen(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image, row-major float values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.data)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"gray image must be a nonempty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("gray image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("gray image values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class ColorImage:
    """Three-channel RGB image, channel-last float values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError(f"color image must have shape (H, W, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("color image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("color image values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class HeatMap:
    """Text-vision relevance grid in [0, 1], optionally tagged with its source word."""

    data: np.ndarray
    word: str | None = None

    def __post_init__(self):
        arr = _frozen(np.clip(self.data, 0.0, 1.0))
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"heat map must be a nonempty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(np.asarray(self.data, dtype=np.float64))):
            raise ValueError("heat map contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, height: int, width: int, word: str | None = None) -> "HeatMap":
        return cls(np.zeros((height, width)), word=word)


@dataclass(frozen=True)
class InterestMask:
    """Strictly binary {0, 1} region mask."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"mask must be a nonempty 2-D grid, got shape {arr.shape}")
        vals = np.unique(arr)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError("mask values must be strictly binary {0, 1}")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def support(self) -> int:
        return int(self.data.sum())

    def complement(self) -> "InterestMask":
        return InterestMask(1 - self.data)

    @classmethod
    def zeros(cls, height: int, width: int) -> "InterestMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @classmethod
    def ones(cls, height: int, width: int) -> "InterestMask":
        return cls(np.ones((height, width), dtype=np.uint8))


@dataclass(frozen=True)
class InstanceMap:
    """Labeled instance segmentation: per-pixel id (0 = background) plus id -> class name."""

    labels: np.ndarray
    classes: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.labels, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"instance map must be a nonempty 2-D grid, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("instance labels must be integers")
        if arr.min() < 0:
            raise ValueError("instance ids must be nonnegative")
        arr = arr.astype(np.int32)
        arr.setflags(write=False)
        classes = {int(k): str(v) for k, v in dict(self.classes).items()}
        present = {int(i) for i in np.unique(arr) if i != 0}
        missing = present - set(classes)
        if missing:
            raise ValueError(f"instance ids without a class name: {sorted(missing)}")
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "classes", MappingProxyType(classes))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def instance_ids(self) -> list[int]:
        """Ids actually present in the label grid, ascending."""
        return [int(i) for i in np.unique(self.labels) if i != 0]

    def support_of(self, instance_id: int) -> InterestMask:
        return InterestMask((self.labels == instance_id).astype(np.uint8))


@dataclass(frozen=True)
class FeatureStack:
    """Multi-channel feature grid (C, H, W) at one pyramid scale level."""

    channels: np.ndarray
    level: int = 0

    def __post_init__(self):
        arr = _frozen(self.channels)
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] == 0 or arr.shape[2] == 0:
            raise ValueError(f"feature stack must have shape (C>=1, H, W), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature stack contains non-finite values")
        object.__setattr__(self, "channels", arr)

    @property
    def channel_count(self) -> int:
        return self.channels.shape[0]

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]


# BT.601 full-range YCbCr. Fusion runs on Y; visible chroma is reattached at export.
_KR, _KG, _KB = 0.299, 0.587, 0.114


def to_luminance(img: ColorImage) -> GrayImage:
    """BT.601 luma of an RGB image."""
    r, g, b = img.data[..., 0], img.data[..., 1], img.data[..., 2]
    y = _KR * r + _KG * g + _KB * b
    return GrayImage(np.clip(y, 0.0, 1.0))


def split_ycbcr(img: ColorImage) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, g, b = img.data[..., 0], img.data[..., 1], img.data[..., 2]
    y = _KR * r + _KG * g + _KB * b
    cb = (b - y) / 1.772 + 0.5
    cr = (r - y) / 1.402 + 0.5
    return y, cb, cr


def merge_ycbcr(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> ColorImage:
    r = y + 1.402 * (cr - 0.5)
    b = y + 1.772 * (cb - 0.5)
    g = (y - _KR * r - _KB * b) / _KG
    rgb = np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)
    return ColorImage(rgb)


def upscale_nearest(m: HeatMap, width: int, height: int) -> HeatMap:
    """Expand a patch-resolution map to pixel resolution.

    Nearest-neighbor index rule: source index = floor(target index * src / dst).
    Never introduces values absent from the source.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"zero-sized upscale target {width}x{height}")
    src = m.data
    rows = (np.arange(height) * src.shape[0]) // height
    cols = (np.arange(width) * src.shape[1]) // width
    return HeatMap(src[np.ix_(rows, cols)], word=m.word)
