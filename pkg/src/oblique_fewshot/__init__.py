"""Few-shot image-feature classification with class anchors fitted per
episode on a product of spheres, queries folded into the objective.

Layers, bottom to top: geometry (manifold primitives), pyramid (region
features from backbone maps), classifier (tangent-space posteriors and
losses), optim (Riemannian SGD fitting), store (binary feature files),
harness (episodic evaluation and sweeps), service/cli (HTTP front end and
its thin command-line client).
"""

__version__ = "0.1.0"

from .classifier import (
    AnchorInit,
    AnchorSet,
    ClassifierConfig,
    Episode,
    PosteriorTensor,
    WeightFn,
    WeightInit,
    WeightSet,
    ce_loss,
    class_posteriors,
    init_anchors,
    init_weights,
    mi_loss,
    posteriors_for_episode,
    predict,
    total_loss,
    weight_factor,
)
from .errors import OMError
from .geometry import (
    GeometryMode,
    OMPoint,
    TangentVector,
    exp_map,
    geodesic_distance,
    log_map,
    project_to_om,
    tangent_project,
)
from .harness import (
    EvalReport,
    Protocol,
    SweepAxes,
    confidence_interval,
    evaluate,
    pooled_view,
    sample_episode,
    sweep,
)
from .optim import (
    FitReport,
    GradientBundle,
    euclidean_gradients,
    fit,
    riemannian_gradients,
    rsgd_step,
)
from .pyramid import encode_kqv, pyramid_pool, region_features, self_attend
from .store import FeatureStore, read_store, synth_store, validate_store, write_store

__all__ = [
    "AnchorInit",
    "AnchorSet",
    "ClassifierConfig",
    "Episode",
    "EvalReport",
    "FeatureStore",
    "FitReport",
    "GeometryMode",
    "GradientBundle",
    "OMError",
    "OMPoint",
    "PosteriorTensor",
    "Protocol",
    "SweepAxes",
    "TangentVector",
    "WeightFn",
    "WeightInit",
    "WeightSet",
    "ce_loss",
    "class_posteriors",
    "encode_kqv",
    "euclidean_gradients",
    "confidence_interval",
    "evaluate",
    "exp_map",
    "fit",
    "geodesic_distance",
    "init_anchors",
    "init_weights",
    "log_map",
    "mi_loss",
    "posteriors_for_episode",
    "predict",
    "project_to_om",
    "pyramid_pool",
    "read_store",
    "region_features",
    "riemannian_gradients",
    "rsgd_step",
    "pooled_view",
    "sample_episode",
    "self_attend",
    "sweep",
    "synth_store",
    "tangent_project",
    "total_loss",
    "validate_store",
    "weight_factor",
    "write_store",
]
