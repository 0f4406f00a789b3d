"""textfuse: text-controllable infrared-visible image fusion and assessment."""

from .imagery import (
    ColorImage,
    FeatureStack,
    GrayImage,
    HeatMap,
    InstanceMap,
    InterestMask,
    to_luminance,
    upscale_nearest,
)
from .association import (
    AssociationConfig,
    AssociationResult,
    TextQuery,
    aggregate_heatmaps,
    associate,
    binarize_interest,
    combine_modalities,
    extract_nouns,
    overlap_ratio,
    proxy_heatmaps,
    refine_interest,
)
from .salience import (
    FilterBank,
    SalienceWeights,
    activity_map,
    compute_salience,
    default_bank,
    downsample_mask,
    feature_stack,
    info_measure,
    pixel_weights,
    scalar_weights,
)
from .fusion import (
    FusionPlan,
    ProjectedFeatures,
    TextFeatureVector,
    affine_fuse,
    fuse_closed_form,
    interest_loss,
    irrelevant_loss,
    total_loss,
)
from .assessment import (
    MetricResult,
    ScoreTable,
    confidence,
    entropy,
    evaluate_metrics,
    mean_rank,
    q_o,
    q_plus,
    qabf,
    sd,
    sf,
    ssim,
    text_guided_reference,
    vif,
)
from .pipeline import FusionOutput, run_association, run_assessment, run_fusion

__version__ = "0.1.0"
