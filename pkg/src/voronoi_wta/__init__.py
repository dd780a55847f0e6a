"""Conditional density estimation from winner-takes-all hypotheses and scores."""

from .datasets import DatasetKind, SyntheticDataset
from .estimators import (
    ConditionalDensityEstimator,
    EstimatorKind,
    HypothesisSet,
    NoDensityError,
    Variant,
    cell_volume,
    density,
    log_density,
    sample,
)
from .geometry import Domain, VoronoiTessellation
from .kernels import KernelSpec
from .metrics import (
    MetricReport,
    emd,
    empirical_distortion,
    empirical_nll,
    histogram_theoretical_risk,
    zador_theoretical_risk,
)
from .nn import AdamState, HeadKind, MlpModel, histogram_loss, mdn_loss, train, wta_compound_loss
from .tuning import SearchConfig, golden_section_min

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ConditionalDensityEstimator", "DatasetKind", "Domain", "EstimatorKind", "HeadKind",
    "HypothesisSet", "KernelSpec", "MetricReport", "MlpModel", "NoDensityError", "SearchConfig",
    "SyntheticDataset", "Variant", "VoronoiTessellation", "cell_volume", "density", "emd",
    "empirical_distortion", "empirical_nll", "golden_section_min", "histogram_loss", "histogram_theoretical_risk",
    "log_density", "mdn_loss", "sample", "train", "wta_compound_loss", "zador_theoretical_risk",
]
