"""Salience weighting for the fusion objective.

Interest regions get per-pixel weights from a softmax over activity-level
maps (the L1 norm across feature channels). Irrelevant regions get scalar
weights from a softmax over a masked multi-scale gradient-energy
information measurement. The learned feature extractors are replaced by a
fixed 5-kernel filter bank and a 5-level Gaussian pyramid; externally
computed feature stacks can be substituted per image.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .imagery import FeatureStack, GrayImage, InterestMask

__all__ = [
    "FilterBank",
    "SalienceWeights",
    "InfoMeasure",
    "default_bank",
    "feature_stack",
    "activity_map",
    "pixel_weights",
    "downsample_mask",
    "info_measure",
    "scalar_weights",
    "compute_salience",
    "PYRAMID_LEVELS",
]

PYRAMID_LEVELS = 5

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def _gaussian_kernel(size: int = 5, sigma: float = 1.0) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


@dataclass(frozen=True)
class FilterBank:
    """Ordered convolution kernels; ``magnitude`` channels take the absolute response."""

    labels: tuple[str, ...]
    kernels: tuple[np.ndarray, ...]
    magnitude: tuple[bool, ...]

    def __post_init__(self):
        if len(self.kernels) < 1:
            raise ValueError("filter bank needs at least one kernel")
        if not (len(self.labels) == len(self.kernels) == len(self.magnitude)):
            raise ValueError("bank fields must have equal length")
        for k in self.kernels:
            if not np.all(np.isfinite(k)):
                raise ValueError("bank kernels must be finite")

    def __len__(self) -> int:
        return len(self.kernels)


def default_bank() -> FilterBank:
    """Identity, Gaussian 5x5 sigma=1, Laplacian 3x3, Sobel-x/-y magnitudes."""
    laplacian = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
    return FilterBank(
        labels=("identity", "gaussian5", "laplacian3", "sobel_x_mag", "sobel_y_mag"),
        kernels=(np.ones((1, 1)), _gaussian_kernel(5, 1.0), laplacian, _SOBEL_X, _SOBEL_Y),
        magnitude=(False, False, False, True, True),
    )


def _correlate(grid: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # cross-correlation with symmetric (edge-inclusive) reflective padding
    return ndimage.correlate(grid, kernel, mode="reflect")


def feature_stack(img: GrayImage | np.ndarray, bank: FilterBank, level: int = 0) -> FeatureStack:
    """One feature channel per bank kernel, reflective boundary padding."""
    grid = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    for k in bank.kernels:
        if grid.shape[0] < k.shape[0] or grid.shape[1] < k.shape[1]:
            raise ValueError(
                f"image extent {grid.shape} smaller than kernel extent {k.shape}"
            )
    channels = []
    for kernel, mag in zip(bank.kernels, bank.magnitude):
        response = _correlate(grid, kernel)
        channels.append(np.abs(response) if mag else response)
    return FeatureStack(np.stack(channels), level=level)


def activity_map(fs: FeatureStack) -> np.ndarray:
    """Per-pixel L1 norm across feature channels."""
    return np.sum(np.abs(fs.channels), axis=0)


def pixel_weights(a_ir: np.ndarray, a_vis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel two-way softmax of the activity maps, max-stabilized."""
    a_ir = np.asarray(a_ir, dtype=np.float64)
    a_vis = np.asarray(a_vis, dtype=np.float64)
    if a_ir.shape != a_vis.shape:
        raise ValueError(f"activity extent mismatch: {a_ir.shape} vs {a_vis.shape}")
    if not (np.all(np.isfinite(a_ir)) and np.all(np.isfinite(a_vis))):
        raise ValueError("activity maps contain non-finite values")
    m = np.maximum(a_ir, a_vis)
    e_ir = np.exp(a_ir - m)
    e_vis = np.exp(a_vis - m)
    total = e_ir + e_vis
    return e_ir / total, e_vis / total


def downsample_mask(mask: InterestMask, s: int) -> InterestMask:
    """s x s max-pooling with ceil division; support survives coarse scales."""
    if s < 1 or (s & (s - 1)) != 0 or s > 16:
        raise ValueError(f"scale must be a power of two in [1, 16], got {s}")
    if s == 1:
        return mask
    h, w = mask.shape
    out_h, out_w = -(-h // s), -(-w // s)
    padded = np.zeros((out_h * s, out_w * s), dtype=np.uint8)
    padded[:h, :w] = mask.data
    pooled = padded.reshape(out_h, s, out_w, s).max(axis=(1, 3))
    return InterestMask(pooled)


class InfoMeasure(NamedTuple):
    value: float
    empty_support: bool


def _pyramid(grid: np.ndarray, levels: int) -> list[np.ndarray]:
    # level i is i-1 rounds of Gaussian blur + 2x decimation
    gauss = _gaussian_kernel(5, 1.0)
    out = [grid]
    for _ in range(levels - 1):
        prev = out[-1]
        if prev.shape[0] < gauss.shape[0] or prev.shape[1] < gauss.shape[1]:
            break
        out.append(_correlate(prev, gauss)[::2, ::2])
    return out


def info_measure(
    img: GrayImage | np.ndarray,
    irr: InterestMask,
    bank: FilterBank | None = None,
) -> InfoMeasure:
    """Masked multi-scale mean squared gradient energy of the feature channels.

    Numerator: per pyramid level, the squared Sobel gradient magnitude of
    every feature channel summed over the downsampled mask support.
    Denominator: channel count times the total mask support across levels.
    Levels whose grid is smaller than the largest bank kernel are dropped
    from both sums. Empty support at every counted level yields 0 with the
    flag set.
    """
    grid = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    if grid.shape != irr.shape:
        raise ValueError(f"extent mismatch: image {grid.shape} vs mask {irr.shape}")
    bank = bank or default_bank()
    kh = max(k.shape[0] for k in bank.kernels)
    kw = max(k.shape[1] for k in bank.kernels)
    numerator = 0.0
    support = 0
    for i, level_grid in enumerate(_pyramid(grid, PYRAMID_LEVELS), start=1):
        if level_grid.shape[0] < kh or level_grid.shape[1] < kw:
            break
        mask_i = downsample_mask(irr, 2 ** (i - 1)).data.astype(np.float64)
        support += int(mask_i.sum())
        if not mask_i.any():
            continue
        fs = feature_stack(level_grid, bank, level=i - 1)
        for channel in fs.channels:
            gx = _correlate(channel, _SOBEL_X)
            gy = _correlate(channel, _SOBEL_Y)
            numerator += float(np.sum(mask_i * (gx**2 + gy**2)))
    if support == 0:
        return InfoMeasure(0.0, True)
    return InfoMeasure(numerator / (len(bank) * support), False)


def scalar_weights(im_ir: float, im_vis: float, c: float = 1.0) -> tuple[float, float]:
    """Two-way softmax of the information measurements scaled by c."""
    if c <= 0:
        raise ValueError(f"scaling constant must be positive, got {c}")
    if im_ir < 0 or im_vis < 0:
        raise ValueError("information measurements must be nonnegative")
    x_ir, x_vis = im_ir / c, im_vis / c
    m = max(x_ir, x_vis)
    e_ir, e_vis = np.exp(x_ir - m), np.exp(x_vis - m)
    total = e_ir + e_vis
    return float(e_ir / total), float(e_vis / total)


@dataclass(frozen=True)
class SalienceWeights:
    """Per-pixel weight pair plus scalar weight pair; each pair sums to one."""

    w_ir: np.ndarray
    w_vis: np.ndarray
    p_ir: float
    p_vis: float

    def __post_init__(self):
        w_ir = np.asarray(self.w_ir, dtype=np.float64)
        w_vis = np.asarray(self.w_vis, dtype=np.float64)
        if w_ir.shape != w_vis.shape:
            raise ValueError("weight map extents differ")
        if np.any(w_ir < 0) or np.any(w_vis < 0) or np.any(w_ir > 1) or np.any(w_vis > 1):
            raise ValueError("pixel weights must lie in [0, 1]")
        if np.max(np.abs(w_ir + w_vis - 1.0), initial=0.0) > 1e-6:
            raise ValueError("pixel weights must sum to 1 within 1e-6")
        if not (0.0 <= self.p_ir <= 1.0 and 0.0 <= self.p_vis <= 1.0):
            raise ValueError("scalar weights must lie in [0, 1]")
        if abs(self.p_ir + self.p_vis - 1.0) > 1e-9:
            raise ValueError("scalar weights must sum to 1 within 1e-9")
        for arr in (w_ir, w_vis):
            arr.setflags(write=False)
        object.__setattr__(self, "w_ir", w_ir)
        object.__setattr__(self, "w_vis", w_vis)


def compute_salience(
    i_ir: GrayImage,
    i_vis: GrayImage,
    b_f: InterestMask,
    bank: FilterBank | None = None,
    softmax_c: float = 1.0,
    features_ir: FeatureStack | None = None,
    features_vis: FeatureStack | None = None,
) -> SalienceWeights:
    """Derive the full weight set for one image pair and interest map.

    ``features_ir``/``features_vis`` substitute externally computed stacks
    for the activity maps; the information measurement always uses the
    internal pyramid proxy.
    """
    if i_ir.shape != i_vis.shape or i_ir.shape != b_f.shape:
        raise ValueError("source images and interest map must share extent")
    bank = bank or default_bank()
    fs_ir = features_ir if features_ir is not None else feature_stack(i_ir, bank)
    fs_vis = features_vis if features_vis is not None else feature_stack(i_vis, bank)
    if (fs_ir.height, fs_ir.width) != i_ir.shape or (fs_vis.height, fs_vis.width) != i_vis.shape:
        raise ValueError("feature stacks must match the image extent")
    w_ir, w_vis = pixel_weights(activity_map(fs_ir), activity_map(fs_vis))
    irr = b_f.complement()
    im_ir = info_measure(i_ir, irr, bank).value
    im_vis = info_measure(i_vis, irr, bank).value
    p_ir, p_vis = scalar_weights(im_ir, im_vis, c=softmax_c)
    return SalienceWeights(w_ir=w_ir, w_vis=w_vis, p_ir=p_ir, p_vis=p_vis)
