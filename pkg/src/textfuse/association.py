"""Coarse-to-fine association: text -> heat maps -> binary interest -> B_f.

The coarse stage aggregates per-word heat maps by pointwise maximum,
binarizes each modality and combines them choose-max. The fine stage keeps
every segmentation instance whose overlap ratio with the combined map
exceeds the threshold, so the final map is a union of whole instances.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .imagery import HeatMap, InstanceMap, InterestMask, upscale_nearest

__all__ = [
    "TextQuery",
    "AssociationConfig",
    "AssociationResult",
    "extract_nouns",
    "aggregate_heatmaps",
    "binarize_interest",
    "combine_modalities",
    "overlap_ratio",
    "refine_interest",
    "proxy_heatmaps",
    "associate",
    "PROXY_HEAT_VALUE",
]

# proxy maps peak below 1.0 so proxy-driven confidence stays distinguishable
# from perfect VLM agreement
PROXY_HEAT_VALUE = 0.9

_TOKEN = re.compile(r"[a-z]+")


def extract_nouns(text: str, lexicon: Iterable[str]) -> list[str]:
    """Lexicon words found in the text, deduplicated, in first-occurrence order.

    Tokens are lowercased; a trailing 's' is stripped when the singular form
    is in the lexicon. No POS tagging.
    """
    lex = {w.lower() for w in lexicon}
    if not lex:
        raise ValueError("noun lexicon is empty")
    found: list[str] = []
    for token in _TOKEN.findall(text.lower()):
        if token in lex:
            word = token
        elif token.endswith("s") and token[:-1] in lex:
            word = token[:-1]
        else:
            continue
        if word not in found:
            found.append(word)
    return found


@dataclass(frozen=True)
class TextQuery:
    """Raw description plus the nouns extracted from it."""

    raw: str
    nouns: tuple[str, ...]

    @classmethod
    def parse(cls, text: str, lexicon: Iterable[str]) -> "TextQuery":
        return cls(raw=text, nouns=tuple(extract_nouns(text, lexicon)))


@dataclass(frozen=True)
class AssociationConfig:
    """Thresholds and lexicon for the association pipeline.

    ``alpha`` is the instance-overlap threshold (strict inequality);
    ``tau_b`` binarizes aggregated heat maps, a mid-low default keeps
    moderately activated patches.
    """

    tau_b: float = 0.35
    alpha: float = 0.5
    lexicon: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if not (0.0 < self.tau_b < 1.0):
            raise ValueError(f"tau_b must lie in (0, 1), got {self.tau_b}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, "lexicon", frozenset(w.lower() for w in self.lexicon))


def aggregate_heatmaps(
    maps: Sequence[HeatMap], extent: tuple[int, int] | None = None
) -> HeatMap:
    """Pointwise maximum of per-word heat maps.

    An empty list yields the all-zero map of ``extent`` (height, width).
    """
    if not maps:
        if extent is None:
            raise ValueError("empty heat-map list needs an explicit extent")
        return HeatMap.zeros(*extent)
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ValueError(f"heat-map extent mismatch: {m.shape} vs {shape}")
    if extent is not None and shape != tuple(extent):
        raise ValueError(f"heat maps have extent {shape}, expected {tuple(extent)}")
    stacked = np.stack([m.data for m in maps])
    return HeatMap(stacked.max(axis=0))


def binarize_interest(m: HeatMap, tau_b: float) -> InterestMask:
    """Threshold a heat map: 1 where value >= tau_b."""
    if not (0.0 < tau_b < 1.0):
        raise ValueError(f"tau_b must lie in (0, 1), got {tau_b}")
    return InterestMask((m.data >= tau_b).astype(np.uint8))


def combine_modalities(b_ir: InterestMask, b_vis: InterestMask) -> InterestMask:
    """Choose-max combination of binary maps (pointwise OR)."""
    if b_ir.shape != b_vis.shape:
        raise ValueError(f"mask extent mismatch: {b_ir.shape} vs {b_vis.shape}")
    return InterestMask(np.maximum(b_ir.data, b_vis.data))


def overlap_ratio(instance: InterestMask, b_hat: InterestMask) -> float:
    """Fraction of the instance support covered by the combined interest map."""
    if instance.shape != b_hat.shape:
        raise ValueError(f"mask extent mismatch: {instance.shape} vs {b_hat.shape}")
    area = instance.support
    if area == 0:
        raise ValueError("degenerate instance: empty support")
    inter = int(np.sum(instance.data & b_hat.data))
    return inter / area


def refine_interest(instances: InstanceMap, b_hat: InterestMask, alpha: float) -> InterestMask:
    """Union of the supports of all instances with overlap ratio strictly above alpha."""
    if instances.shape != b_hat.shape:
        raise ValueError(f"extent mismatch: {instances.shape} vs {b_hat.shape}")
    out = np.zeros(b_hat.shape, dtype=np.uint8)
    for inst_id in instances.instance_ids():
        support = instances.labels == inst_id
        ratio = np.sum(support & (b_hat.data == 1)) / np.sum(support)
        if ratio > alpha:
            out[support] = 1
    return InterestMask(out)


def proxy_heatmaps(nouns: Sequence[str], instances: InstanceMap) -> list[HeatMap]:
    """Deterministic stand-in heat maps built from labeled instances.

    Each noun gets a map that is PROXY_HEAT_VALUE on the support of every
    instance of a matching class and 0 elsewhere; unmatched nouns yield
    all-zero maps.
    """
    maps = []
    for noun in nouns:
        grid = np.zeros(instances.shape)
        for inst_id, cls in instances.classes.items():
            if cls.lower() == noun.lower():
                grid[instances.labels == inst_id] = PROXY_HEAT_VALUE
        maps.append(HeatMap(grid, word=noun.lower()))
    return maps


@dataclass(frozen=True)
class AssociationResult:
    """Stage outputs of the association pipeline, coarse to fine."""

    m_hat_ir: HeatMap
    m_hat_vis: HeatMap
    b_hat: InterestMask
    b_f: InterestMask


def _per_word(
    nouns: Sequence[str],
    supplied: dict[str, dict[str, HeatMap]] | None,
    proxies: Sequence[HeatMap],
    modality: str,
    extent: tuple[int, int],
) -> list[HeatMap]:
    if supplied is None:
        return list(proxies)
    out = []
    for noun in nouns:
        m = supplied.get(noun.lower(), {}).get(modality)
        if m is None:
            out.append(HeatMap.zeros(*extent, word=noun))
        elif m.shape != extent:
            out.append(upscale_nearest(m, width=extent[1], height=extent[0]))
        else:
            out.append(m)
    return out


def associate(
    query: TextQuery,
    instances: InstanceMap,
    cfg: AssociationConfig,
    heatmaps: dict[str, dict[str, HeatMap]] | None = None,
) -> AssociationResult:
    """Run the full coarse-to-fine pipeline for one image pair.

    ``heatmaps`` maps word -> modality ("ir"/"vis") -> HeatMap, typically
    loaded from files; patch-resolution maps are upscaled. When absent, both
    modalities fall back to instance-derived proxy maps. A modality with no
    supplied map for a word contributes an all-zero map for that word.
    """
    extent = instances.shape
    proxies = proxy_heatmaps(query.nouns, instances)
    maps_ir = _per_word(query.nouns, heatmaps, proxies, "ir", extent)
    maps_vis = _per_word(query.nouns, heatmaps, proxies, "vis", extent)
    m_hat_ir = aggregate_heatmaps(maps_ir, extent=extent)
    m_hat_vis = aggregate_heatmaps(maps_vis, extent=extent)
    b_hat = combine_modalities(
        binarize_interest(m_hat_ir, cfg.tau_b), binarize_interest(m_hat_vis, cfg.tau_b)
    )
    b_f = refine_interest(instances, b_hat, cfg.alpha)
    return AssociationResult(m_hat_ir=m_hat_ir, m_hat_vis=m_hat_vis, b_hat=b_hat, b_f=b_f)
