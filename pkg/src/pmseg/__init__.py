"""Pseudo-marginal MCMC shape sampling for image segmentation.

Samples posterior segmentations under a kernel-density shape prior whose
per-sample cost does not grow with the training-set size. The core library
lives in the submodules re-exported here; the command-line entry point is
pmseg.cli_app.main and the HTTP service is pmseg.service.app (both import
their web dependencies lazily relative to this package root, so plain
`import pmseg` needs only numpy and scipy).
"""

from .analysis import (
    ConfidenceMap,
    GridSpec,
    TimingRun,
    TimingTable,
    ToyPosteriorOracle,
    class_histogram,
    confidence_map,
    dice,
    timing_report,
    total_variation,
    toy_exact_posterior,
)
from .geometry import (
    BinaryMask,
    GrayImage,
    LevelSet,
    levelset_to_mask,
    mask_to_levelset,
    region_means,
)
from .likelihood import (
    ChanVeseLikelihood,
    IsotropicGaussianLikelihood,
    LikelihoodParams,
    data_gradient,
    log_likelihood,
)
from .proposal import (
    ProposalParams,
    SmoothCovariance,
    build_blur_operator_covariance,
    build_smooth_covariance,
    drift_mean,
    log_proposal_ratio,
    nearest_psd,
    propose_shape,
)
from .sampler import (
    ChainResult,
    ChainState,
    Checkpoint,
    SampleRecord,
    SamplerConfig,
    class_acceptance_log_ratio,
    class_move,
    init_chain,
    load_checkpoint,
    run_chain,
    save_checkpoint,
    shape_move,
)
from .shape_prior import (
    LogDensityEstimate,
    TrainingSet,
    calibrate_bandwidth,
    log_gaussian_kernel,
    log_prior_at_subset,
    log_prior_full,
    log_prior_subsampled,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "ChainResult",
    "ChainState",
    "ChanVeseLikelihood",
    "Checkpoint",
    "ConfidenceMap",
    "GrayImage",
    "GridSpec",
    "IsotropicGaussianLikelihood",
    "LevelSet",
    "LikelihoodParams",
    "LogDensityEstimate",
    "ProposalParams",
    "SampleRecord",
    "SamplerConfig",
    "SmoothCovariance",
    "TimingRun",
    "TimingTable",
    "ToyPosteriorOracle",
    "TrainingSet",
    "__version__",
    "build_blur_operator_covariance",
    "build_smooth_covariance",
    "calibrate_bandwidth",
    "class_acceptance_log_ratio",
    "class_histogram",
    "class_move",
    "confidence_map",
    "data_gradient",
    "dice",
    "drift_mean",
    "init_chain",
    "levelset_to_mask",
    "load_checkpoint",
    "log_gaussian_kernel",
    "log_likelihood",
    "log_prior_at_subset",
    "log_prior_full",
    "log_prior_subsampled",
    "log_proposal_ratio",
    "mask_to_levelset",
    "nearest_psd",
    "propose_shape",
    "region_means",
    "run_chain",
    "save_checkpoint",
    "shape_move",
    "timing_report",
    "total_variation",
    "toy_exact_posterior",
]
