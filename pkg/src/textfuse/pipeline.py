"""End-to-end composition shared by the CLI, the batch runner and the service.

One image pair flows associate -> salience -> closed-form fusion -> metrics.
Everything here is pure; callers own all file and transport concerns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .assessment import METRIC_NAMES, MetricResult, evaluate_metrics
from .association import (
    AssociationConfig,
    AssociationResult,
    TextQuery,
    associate,
)
from .fusion import FusionPlan, fuse_closed_form
from .imagery import FeatureStack, GrayImage, HeatMap, InstanceMap, InterestMask
from .salience import SalienceWeights, compute_salience

__all__ = ["FusionOutput", "default_lexicon", "run_association", "run_fusion", "run_assessment"]


@dataclass(frozen=True)
class FusionOutput:
    """Fused image plus every intermediate a caller may want to export."""

    fused: GrayImage
    association: AssociationResult
    weights: SalienceWeights


def default_lexicon(instances: InstanceMap | None, extra: Sequence[str] = ()) -> frozenset[str]:
    """Class names of the instance map plus any supplied words."""
    words = {w.lower() for w in extra}
    if instances is not None:
        words.update(c.lower() for c in instances.classes.values())
    return frozenset(words)


def _empty_association(extent: tuple[int, int]) -> AssociationResult:
    h, w = extent
    return AssociationResult(
        m_hat_ir=HeatMap.zeros(h, w),
        m_hat_vis=HeatMap.zeros(h, w),
        b_hat=InterestMask.zeros(h, w),
        b_f=InterestMask.zeros(h, w),
    )


def run_association(
    text: str,
    instances: InstanceMap | None,
    extent: tuple[int, int],
    cfg: AssociationConfig | None = None,
    heatmaps: dict[str, dict[str, HeatMap]] | None = None,
) -> AssociationResult:
    """Associate a description with an image pair.

    Without an instance map the fine stage cannot run, so the result is the
    empty association (all-zero maps); the same holds for an empty lexicon.
    """
    cfg = cfg or AssociationConfig()
    lexicon = cfg.lexicon or default_lexicon(instances)
    if instances is None or not lexicon:
        return _empty_association(extent)
    if instances.shape != extent:
        raise ValueError(f"instance map extent {instances.shape} differs from pair {extent}")
    query = TextQuery.parse(text, lexicon)
    cfg = AssociationConfig(tau_b=cfg.tau_b, alpha=cfg.alpha, lexicon=lexicon)
    return associate(query, instances, cfg, heatmaps=heatmaps)


def run_fusion(
    i_ir: GrayImage,
    i_vis: GrayImage,
    text: str = "",
    instances: InstanceMap | None = None,
    cfg: AssociationConfig | None = None,
    heatmaps: dict[str, dict[str, HeatMap]] | None = None,
    squared_weights: bool = True,
    softmax_c: float = 1.0,
    features_ir: FeatureStack | None = None,
    features_vis: FeatureStack | None = None,
) -> FusionOutput:
    """Associate, weigh and fuse one aligned pair under a textual description."""
    if i_ir.shape != i_vis.shape:
        raise ValueError(f"source pair extents differ: {i_ir.shape} vs {i_vis.shape}")
    assoc = run_association(text, instances, i_ir.shape, cfg=cfg, heatmaps=heatmaps)
    weights = compute_salience(
        i_ir,
        i_vis,
        assoc.b_f,
        softmax_c=softmax_c,
        features_ir=features_ir,
        features_vis=features_vis,
    )
    plan = FusionPlan(b_f=assoc.b_f, weights=weights, i_ir=i_ir, i_vis=i_vis)
    fused = fuse_closed_form(plan, squared_weights=squared_weights)
    return FusionOutput(fused=fused, association=assoc, weights=weights)


def run_assessment(
    fused: GrayImage,
    i_ir: GrayImage,
    i_vis: GrayImage,
    assoc: AssociationResult,
    metrics: Sequence[str] = METRIC_NAMES,
    strict_support: bool = False,
) -> tuple[list[MetricResult], dict[str, float], float]:
    """Metric suite for an already fused image, confidence included."""
    return evaluate_metrics(
        fused,
        i_ir,
        i_vis,
        assoc.b_f,
        m_hat_ir=assoc.m_hat_ir,
        m_hat_vis=assoc.m_hat_vis,
        b_hat=assoc.b_hat,
        metrics=metrics,
        strict_support=strict_support,
    )
