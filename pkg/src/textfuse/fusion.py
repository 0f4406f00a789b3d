"""Region-partitioned fusion objective and its closed-form per-pixel minimizer.

The loss splits the frame by the final interest map: interest pixels pay a
salience-weighted squared distance to both sources, irrelevant pixels pay a
scalar-weighted one. Both parts are separable per pixel, so the global
minimizer is computed exactly instead of being approximated by a trained
network. The affine fusion unit is shipped as an isolated tensor contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagery import GrayImage, InterestMask
from .salience import SalienceWeights

__all__ = [
    "FusionPlan",
    "TextFeatureVector",
    "ProjectedFeatures",
    "interest_loss",
    "irrelevant_loss",
    "total_loss",
    "fuse_closed_form",
    "affine_fuse",
]


@dataclass(frozen=True)
class FusionPlan:
    """Everything the objective needs: mask, weights, and the source pair."""

    b_f: InterestMask
    weights: SalienceWeights
    i_ir: GrayImage
    i_vis: GrayImage

    def __post_init__(self):
        shapes = {
            self.b_f.shape,
            self.weights.w_ir.shape,
            self.i_ir.shape,
            self.i_vis.shape,
        }
        if len(shapes) != 1:
            raise ValueError(f"plan extents differ: {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.b_f.shape


def _as_grid(f: GrayImage | np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    grid = f.data if isinstance(f, GrayImage) else np.asarray(f, dtype=np.float64)
    if grid.shape != shape:
        raise ValueError(f"candidate extent {grid.shape} does not match plan {shape}")
    return grid


def interest_loss(f: GrayImage | np.ndarray, plan: FusionPlan) -> float:
    """Interest-region term: masked, pixel-weighted squared Frobenius distances."""
    grid = _as_grid(f, plan.shape)
    b = plan.b_f.data.astype(np.float64)
    w = plan.weights
    h, wd = plan.shape
    l_vis = np.sum((b * w.w_vis * (grid - plan.i_vis.data)) ** 2)
    l_ir = np.sum((b * w.w_ir * (grid - plan.i_ir.data)) ** 2)
    return float((l_vis + l_ir) / (h * wd))


def irrelevant_loss(f: GrayImage | np.ndarray, plan: FusionPlan) -> float:
    """Irrelevant-region term: complement-masked distances under scalar weights."""
    grid = _as_grid(f, plan.shape)
    b_bar = 1.0 - plan.b_f.data.astype(np.float64)
    w = plan.weights
    h, wd = plan.shape
    l_vis = w.p_vis * np.sum((b_bar * (grid - plan.i_vis.data)) ** 2)
    l_ir = w.p_ir * np.sum((b_bar * (grid - plan.i_ir.data)) ** 2)
    return float((l_vis + l_ir) / (h * wd))


def total_loss(f: GrayImage | np.ndarray, plan: FusionPlan) -> float:
    return interest_loss(f, plan) + irrelevant_loss(f, plan)


def fuse_closed_form(plan: FusionPlan, squared_weights: bool = True) -> GrayImage:
    """Exact per-pixel minimizer of the fusion objective.

    Interest pixels blend with the squared pixel weights (the weights sit
    inside the Frobenius norm); ``squared_weights=False`` selects the
    weight-outside-norm alternative, a plain convex blend. Irrelevant pixels
    blend with the scalar weights. Output clamped to [0, 1].
    """
    w = plan.weights
    ir, vis = plan.i_ir.data, plan.i_vis.data
    if squared_weights:
        denom = w.w_vis**2 + w.w_ir**2
        interest_pixels = plan.b_f.data == 1
        if np.any(denom[interest_pixels] <= 0.0):
            raise ValueError("degenerate pixel weights: w_ir = w_vis = 0 inside the interest region")
        safe = np.where(denom > 0.0, denom, 1.0)
        interest = (w.w_vis**2 * vis + w.w_ir**2 * ir) / safe
    else:
        interest = w.w_vis * vis + w.w_ir * ir
    p_total = w.p_vis + w.p_ir
    irrelevant = (w.p_vis * vis + w.p_ir * ir) / p_total
    fused = np.where(plan.b_f.data == 1, interest, irrelevant)
    return GrayImage(np.clip(fused, 0.0, 1.0))


@dataclass(frozen=True)
class TextFeatureVector:
    """Linguistic feature vector, duplicated spatially inside the affine unit."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if arr.size < 1:
            raise ValueError("text feature vector needs at least one channel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("text feature vector contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def channel_count(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class ProjectedFeatures:
    """Projected image features on the fusion grid, shape (K, H, W)."""

    channels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.channels, dtype=np.float64, copy=True)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ValueError(f"projected features must have shape (K, H, W), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("projected features contain non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "channels", arr)

    @property
    def channel_count(self) -> int:
        return self.channels.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.channels.shape


def affine_fuse(
    mu: ProjectedFeatures, text: TextFeatureVector, bias: ProjectedFeatures
) -> ProjectedFeatures:
    """Affine fusion unit: out(k, y, x) = mu(k, y, x) * text(k) + bias(k, y, x).

    The infrared-side projection supplies the weight term, the visible-side
    projection the bias term; the text vector broadcasts over the grid.
    """
    if mu.shape != bias.shape:
        raise ValueError(f"weight/bias feature extents differ: {mu.shape} vs {bias.shape}")
    if text.channel_count != mu.channel_count:
        raise ValueError(
            f"channel-count mismatch: text has {text.channel_count}, features have {mu.channel_count}"
        )
    fused = mu.channels * text.values[:, None, None] + bias.channels
    return ProjectedFeatures(fused)
