"""Shared random-input builders for the test suite."""

import numpy as np

from textfuse import GrayImage, InstanceMap, InterestMask
from textfuse.fusion import FusionPlan
from textfuse.salience import SalienceWeights


def random_gray(rng, h=16, w=16):
    return GrayImage(rng.uniform(0.0, 1.0, (h, w)))


def random_mask(rng, h=16, w=16, p=0.5):
    return InterestMask((rng.uniform(0.0, 1.0, (h, w)) < p).astype(np.uint8))


def random_weights(rng, h=16, w=16):
    w_ir = rng.uniform(0.05, 0.95, (h, w))
    p_ir = float(rng.uniform(0.05, 0.95))
    return SalienceWeights(w_ir=w_ir, w_vis=1.0 - w_ir, p_ir=p_ir, p_vis=1.0 - p_ir)


def random_plan(rng, h=16, w=16):
    return FusionPlan(
        b_f=random_mask(rng, h, w),
        weights=random_weights(rng, h, w),
        i_ir=random_gray(rng, h, w),
        i_vis=random_gray(rng, h, w),
    )


def random_instances(rng, h=8, w=8, count=3, classes=("car", "person", "tree")):
    """Random rectangular instances, later ids overwrite earlier ones."""
    labels = np.zeros((h, w), dtype=np.int32)
    mapping = {}
    for idx in range(1, count + 1):
        y0 = int(rng.integers(0, h - 1))
        x0 = int(rng.integers(0, w - 1))
        y1 = int(rng.integers(y0 + 1, h + 1))
        x1 = int(rng.integers(x0 + 1, w + 1))
        labels[y0:y1, x0:x1] = idx
        mapping[idx] = classes[idx % len(classes)]
    present = {int(i) for i in np.unique(labels) if i != 0}
    return InstanceMap(labels, {i: mapping[i] for i in present})
