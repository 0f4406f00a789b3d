"""Fusion quality metrics, the textual-attention variants, and rank aggregation.

Classic metrics follow the fusion-literature conventions: SF/SD/EN on the
[0, 255] intensity scale, single-scale SSIM (11x11 Gaussian window,
sigma 1.5, K1=0.01, K2=0.03, unit dynamic range), pixel-domain VIF with 4
Gaussian scales and noise variance 2 on the [0, 255] scale, and the
Sobel-based edge-preservation measure. The edge-preservation sigmoids keep
the published shape constants (kg=-15, sg=0.5, ka=-22, sa=0.8) but are
normalized at the ideal operating point so perfect preservation scores
exactly 1.

The textual-attention variant of a reference metric blends the two-source
average with the similarity to a text-guided composite, weighted by the
confidence that the text matches the scene.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.signal import correlate2d
from scipy.stats import rankdata

from .imagery import GrayImage, HeatMap, InterestMask

__all__ = [
    "MetricResult",
    "ScoreTable",
    "sf",
    "sd",
    "entropy",
    "ssim",
    "qabf",
    "qabf_single",
    "vif",
    "q_o",
    "text_guided_reference",
    "confidence",
    "q_plus",
    "mean_rank",
    "evaluate_metrics",
    "PAIR_METRICS",
    "NO_REFERENCE_METRICS",
    "METRIC_NAMES",
]

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def _grid(img: GrayImage | np.ndarray) -> np.ndarray:
    return img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)


def _pair(a, b, name: str) -> tuple[np.ndarray, np.ndarray]:
    ga, gb = _grid(a), _grid(b)
    if ga.shape != gb.shape:
        raise ValueError(f"{name}: extent mismatch {ga.shape} vs {gb.shape}")
    return ga, gb


def sf(img: GrayImage | np.ndarray) -> float:
    """Spatial frequency sqrt(RF^2 + CF^2) of first differences, [0, 255] scale."""
    g = _grid(img) * 255.0
    if g.shape[0] < 2 or g.shape[1] < 2:
        raise ValueError(f"sf needs at least a 2x2 image, got {g.shape}")
    rf2 = np.mean((g[:, 1:] - g[:, :-1]) ** 2)
    cf2 = np.mean((g[1:, :] - g[:-1, :]) ** 2)
    return float(np.sqrt(rf2 + cf2))


def sd(img: GrayImage | np.ndarray) -> float:
    """Population standard deviation on the [0, 255] scale."""
    return float(np.std(_grid(img) * 255.0))


def entropy(img: GrayImage | np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin intensity histogram."""
    levels = np.round(_grid(img) * 255.0).astype(np.int64).ravel()
    counts = np.bincount(levels, minlength=256)
    p = counts / counts.sum()
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz)))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


def ssim(a: GrayImage | np.ndarray, b: GrayImage | np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03, L=1."""
    ga, gb = _pair(a, b, "ssim")
    if ga.shape[0] < 11 or ga.shape[1] < 11:
        raise ValueError(f"ssim needs at least an 11x11 image, got {ga.shape}")
    win = _gaussian_window(11, 1.5)
    c1, c2 = 0.01**2, 0.03**2
    mu1 = correlate2d(ga, win, mode="valid")
    mu2 = correlate2d(gb, win, mode="valid")
    mu1_sq, mu2_sq, mu1_mu2 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    s1 = correlate2d(ga * ga, win, mode="valid") - mu1_sq
    s2 = correlate2d(gb * gb, win, mode="valid") - mu2_sq
    s12 = correlate2d(ga * gb, win, mode="valid") - mu1_mu2
    ssim_map = ((2 * mu1_mu2 + c1) * (2 * s12 + c2)) / ((mu1_sq + mu2_sq + c1) * (s1 + s2 + c2))
    return float(np.mean(ssim_map))


def _edge_strength_angle(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # reflective padding: constant regions keep zero gradient at the frame border
    sx = ndimage.correlate(g, _SOBEL_X, mode="reflect")
    sy = ndimage.correlate(g, _SOBEL_Y, mode="reflect")
    strength = np.hypot(sx, sy)
    angle = np.full_like(g, np.pi / 2)
    nz = sx != 0
    angle[nz] = np.arctan(sy[nz] / sx[nz])
    return strength, angle


# Petrovic sigmoid shape constants; ceilings normalized so Q(1, 1) = 1.
_KG, _SG = -15.0, 0.5
_KA, _SA = -22.0, 0.8


def _preservation(g_ref: np.ndarray, a_ref: np.ndarray, g_f: np.ndarray, a_f: np.ndarray) -> np.ndarray:
    g_max = np.maximum(g_ref, g_f)
    g_rel = np.where(g_max > 0, np.minimum(g_ref, g_f) / np.where(g_max > 0, g_max, 1.0), 1.0)
    a_rel = 1.0 - np.abs(a_ref - a_f) / (np.pi / 2)
    qg = (1.0 + np.exp(_KG * (1.0 - _SG))) / (1.0 + np.exp(_KG * (g_rel - _SG)))
    qa = (1.0 + np.exp(_KA * (1.0 - _SA))) / (1.0 + np.exp(_KA * (a_rel - _SA)))
    return qg * qa


def qabf(f: GrayImage | np.ndarray, a: GrayImage | np.ndarray, b: GrayImage | np.ndarray) -> float:
    """Edge-preservation measure of a fused image against both sources.

    Per pixel, the relative Sobel edge strength and orientation of the fused
    image against each source pass through the normalized sigmoids; the two
    preservation values are averaged with the source edge strengths as
    weights. Pixels where both sources are flat carry zero weight; all-flat
    inputs score 0 by convention.
    """
    gf, ga = _pair(f, a, "qabf")
    _, gb = _pair(f, b, "qabf")
    sa, aa = _edge_strength_angle(ga)
    sb, ab = _edge_strength_angle(gb)
    sfu, af = _edge_strength_angle(gf)
    q_af = _preservation(sa, aa, sfu, af)
    q_bf = _preservation(sb, ab, sfu, af)
    denom = float(np.sum(sa + sb))
    if denom == 0.0:
        return 0.0
    return float(np.sum(q_af * sa + q_bf * sb) / denom)


def qabf_single(f: GrayImage | np.ndarray, ref: GrayImage | np.ndarray) -> float:
    """Single-reference edge preservation; equals qabf(f, ref, ref)."""
    return qabf(f, ref, ref)


def _fspecial_gauss(n: int) -> np.ndarray:
    return _gaussian_window(n, n / 5.0)


def vif(ref: GrayImage | np.ndarray, dist: GrayImage | np.ndarray) -> float:
    """Pixel-domain visual information fidelity, 4 Gaussian scales.

    Noise variance 2 on the [0, 255] scale. Per scale s in 1..4 the window is
    N = 2^(5-s)+1 wide with sigma N/5; from scale 2 on, both images are
    smoothed (valid) and decimated by 2 before the local statistics. Local
    means/variances/covariance come from valid-mode windows; the regression
    gain g = cov/var_ref with var floors at 1e-10 (g zeroed and the residual
    redirected for degenerate pixels, negative g clamped). Scales whose grid
    no longer fits the window contribute nothing.
    """
    g_ref, g_dist = _pair(ref, dist, "vif")
    g_ref = g_ref * 255.0
    g_dist = g_dist * 255.0
    sigma_nsq, eps = 2.0, 1e-10
    num = 0.0
    den = 0.0
    for scale in range(1, 5):
        n = 2 ** (4 - scale + 1) + 1
        win = _fspecial_gauss(n)
        if scale > 1:
            if g_ref.shape[0] < n or g_ref.shape[1] < n:
                break
            g_ref = correlate2d(g_ref, win, mode="valid")[::2, ::2]
            g_dist = correlate2d(g_dist, win, mode="valid")[::2, ::2]
        if g_ref.shape[0] < n or g_ref.shape[1] < n:
            continue
        mu1 = correlate2d(g_ref, win, mode="valid")
        mu2 = correlate2d(g_dist, win, mode="valid")
        mu1_sq, mu2_sq, mu1_mu2 = mu1 * mu1, mu2 * mu2, mu1 * mu2
        sigma1_sq = correlate2d(g_ref * g_ref, win, mode="valid") - mu1_sq
        sigma2_sq = correlate2d(g_dist * g_dist, win, mode="valid") - mu2_sq
        sigma12 = correlate2d(g_ref * g_dist, win, mode="valid") - mu1_mu2
        sigma1_sq[sigma1_sq < 0] = 0
        sigma2_sq[sigma2_sq < 0] = 0

        g = sigma12 / (sigma1_sq + eps)
        sv_sq = sigma2_sq - g * sigma12

        g[sigma1_sq < eps] = 0
        sv_sq[sigma1_sq < eps] = sigma2_sq[sigma1_sq < eps]
        sigma1_sq[sigma1_sq < eps] = 0
        g[sigma2_sq < eps] = 0
        sv_sq[sigma2_sq < eps] = 0
        sv_sq[g < 0] = sigma2_sq[g < 0]
        g[g < 0] = 0
        sv_sq[sv_sq <= eps] = eps

        num += float(np.sum(np.log10(1.0 + g * g * sigma1_sq / (sv_sq + sigma_nsq))))
        den += float(np.sum(np.log10(1.0 + sigma1_sq / sigma_nsq)))
    if den == 0.0:
        raise ValueError(
            "vif undefined: reference carries no information at any scale "
            "(constant image, or extent below the 17x17 first-scale window)"
        )
    return num / den


# (image, reference) -> quality; q_o/q_plus treat every entry uniformly
PAIR_METRICS: Mapping[str, Callable] = {
    "qabf": qabf_single,
    "ssim": ssim,
    "vif": lambda img, ref: vif(ref, img),
}

NO_REFERENCE_METRICS: Mapping[str, Callable] = {
    "sf": sf,
    "sd": sd,
    "en": entropy,
}

METRIC_NAMES: tuple[str, ...] = ("qabf", "ssim", "vif", "sf", "sd", "en")


def _resolve_pair_metric(iqa) -> tuple[str, Callable]:
    if callable(iqa):
        return getattr(iqa, "__name__", "custom"), iqa
    name = str(iqa).lower()
    if name not in PAIR_METRICS:
        raise KeyError(f"unknown reference metric {iqa!r}; have {sorted(PAIR_METRICS)}")
    return name, PAIR_METRICS[name]


def q_o(iqa, f: GrayImage, ir: GrayImage, vis: GrayImage) -> float:
    """Two-source average quality: both inputs contribute equally as references."""
    _, fn = _resolve_pair_metric(iqa)
    return (fn(f, ir) + fn(f, vis)) / 2.0


def text_guided_reference(ir: GrayImage, vis: GrayImage, b_f: InterestMask) -> GrayImage:
    """Composite reference: infrared inside the interest map, visible outside."""
    if ir.shape != vis.shape or ir.shape != b_f.shape:
        raise ValueError("text-guided reference needs equal extents")
    b = b_f.data.astype(np.float64)
    return GrayImage(ir.data * b + vis.data * (1.0 - b))


def confidence(
    b_f: InterestMask,
    b_hat: InterestMask,
    m_ir: HeatMap,
    m_vis: HeatMap,
    strict_support: bool = False,
) -> float:
    """Average text-vision response over the final interest map, in [0, 1].

    Numerator: choose-max of the aggregated heat maps summed over B_f.
    Denominator: B_f support restricted to pixels where the combined coarse
    map is nonzero. ``strict_support`` restricts the numerator to the same
    pixels. Empty B_f or an empty denominator yields 0. The ratio is clamped
    to [0, 1] because instance refinement can push B_f outside the coarse
    support.
    """
    shapes = {b_f.shape, b_hat.shape, m_ir.shape, m_vis.shape}
    if len(shapes) != 1:
        raise ValueError(f"confidence inputs must share extent, got {sorted(shapes)}")
    b = b_f.data.astype(np.float64)
    if b.sum() == 0:
        return 0.0
    response = np.maximum(m_ir.data, m_vis.data)
    numerator_mask = b * (b_hat.data != 0) if strict_support else b
    numerator = float(np.sum(numerator_mask * response))
    denominator = float(np.sum(b * (b_hat.data != 0)))
    if denominator == 0.0:
        return 0.0
    return float(np.clip(numerator / denominator, 0.0, 1.0))


@dataclass(frozen=True)
class MetricResult:
    """One reference metric evaluated plainly and with textual attention."""

    name: str
    q_o: float
    q_plus: float
    c_t: float

    def __post_init__(self):
        if not (0.0 <= self.c_t <= 1.0):
            raise ValueError(f"confidence out of range: {self.c_t}")

    @property
    def w_o(self) -> float:
        return 1.0 - self.c_t


def q_plus(
    iqa,
    f: GrayImage,
    ir: GrayImage,
    vis: GrayImage,
    i_tf: GrayImage,
    c_t: float,
) -> MetricResult:
    """Textual-attention score: (1 - c_t) * Q_o + c_t * iqa(f, text-guided reference)."""
    if not (0.0 <= c_t <= 1.0):
        raise ValueError(f"confidence must lie in [0, 1], got {c_t}")
    name, fn = _resolve_pair_metric(iqa)
    base = (fn(f, ir) + fn(f, vis)) / 2.0
    if c_t == 0.0:
        plus = base
    else:
        plus = (1.0 - c_t) * base + c_t * fn(f, i_tf)
    return MetricResult(name=name, q_o=base, q_plus=plus, c_t=c_t)


@dataclass(frozen=True)
class ScoreTable:
    """Rectangular method x metric score matrix with per-metric orientation."""

    methods: tuple[str, ...]
    metrics: tuple[str, ...]
    scores: np.ndarray
    higher_is_better: tuple[bool, ...] = ()

    def __post_init__(self):
        arr = np.array(self.scores, dtype=np.float64, copy=True)
        if arr.shape != (len(self.methods), len(self.metrics)):
            raise ValueError(
                f"score matrix shape {arr.shape} does not match "
                f"{len(self.methods)} methods x {len(self.metrics)} metrics"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("score table contains non-finite values")
        hib = self.higher_is_better or tuple(True for _ in self.metrics)
        if len(hib) != len(self.metrics):
            raise ValueError("orientation flags must match the metric count")
        arr.setflags(write=False)
        object.__setattr__(self, "scores", arr)
        object.__setattr__(self, "higher_is_better", tuple(hib))

    def column(self, metric: str) -> np.ndarray:
        try:
            idx = self.metrics.index(metric)
        except ValueError:
            raise KeyError(f"metric column {metric!r} not in table {self.metrics}") from None
        return self.scores[:, idx]


def mean_rank(table: ScoreTable, metrics: Sequence[str]) -> dict[str, float]:
    """Mean of per-metric competition ranks (ties share the average rank); lower is better."""
    if not metrics:
        raise ValueError("mean_rank needs at least one metric column")
    ranks = np.zeros((len(table.methods), len(metrics)))
    for j, name in enumerate(metrics):
        col = table.column(name)
        hib = table.higher_is_better[table.metrics.index(name)]
        ranks[:, j] = rankdata(-col if hib else col, method="average")
    means = ranks.mean(axis=1)
    return {method: float(m) for method, m in zip(table.methods, means)}


def evaluate_metrics(
    fused: GrayImage,
    ir: GrayImage,
    vis: GrayImage,
    b_f: InterestMask,
    m_hat_ir: HeatMap | None = None,
    m_hat_vis: HeatMap | None = None,
    b_hat: InterestMask | None = None,
    metrics: Sequence[str] = METRIC_NAMES,
    strict_support: bool = False,
) -> tuple[list[MetricResult], dict[str, float], float]:
    """Evaluate a metric selection for one fused image.

    Returns (reference-metric results, no-reference values, confidence).
    Without heat maps or the coarse map the confidence is 0 and every Q+
    degenerates to Q_o.
    """
    unknown = [m for m in metrics if m not in PAIR_METRICS and m not in NO_REFERENCE_METRICS]
    if unknown:
        raise KeyError(f"unknown metrics {unknown}; have {sorted(METRIC_NAMES)}")
    if m_hat_ir is not None and m_hat_vis is not None and b_hat is not None:
        c_t = confidence(b_f, b_hat, m_hat_ir, m_hat_vis, strict_support=strict_support)
    else:
        c_t = 0.0
    i_tf = text_guided_reference(ir, vis, b_f)
    results = [q_plus(m, fused, ir, vis, i_tf, c_t) for m in metrics if m in PAIR_METRICS]
    plain = {m: NO_REFERENCE_METRICS[m](fused) for m in metrics if m in NO_REFERENCE_METRICS}
    return results, plain, c_t
