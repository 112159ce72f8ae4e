"""Channel modelling, diffusion estimation and baseline services."""

from .baselines import (
    AngularDictionary,
    BaselineError,
    CovarianceError,
    build_dictionary,
    lmmse_estimate,
    lmmse_filter,
    ls_estimate,
    nmse,
    nmse_linear,
    omp_estimate,
    omp_pursuit,
)
from .channel_data import (
    ChannelDataset,
    DatasetError,
    DatasetVersionError,
    TruncatedPayloadError,
    generate_dataset,
    generate_named_dataset,
    import_channels,
    load_dataset,
    mix_datasets,
    sample_covariance,
    save_dataset,
    split_dataset,
)
from .diffusion_core import (
    Checkpoint,
    CheckpointError,
    CheckpointVersionError,
    ScheduleError,
    ScoreModel,
    TrainingDivergedError,
    analytic_gaussian_score,
    build_score_model,
    dsm_loss,
    load_checkpoint,
    make_sde,
    perturb,
    save_checkpoint,
    sigma,
    train,
)
from .extrapolation import (
    Condition,
    ConditionError,
    MaskSpecError,
    extrapolate,
    make_condition,
    make_mask,
    train_conditional,
)
from .guided_sampler import (
    ChannelEstimate,
    SamplerAbortError,
    cfg_score,
    estimate_channel,
    posterior_sample,
    run_predictor_corrector,
)
from .latent_feedback import (
    FeedbackError,
    FeedbackReport,
    PayloadFormatError,
    VAEModel,
    feedback_roundtrip,
    load_vae,
    save_vae,
    train_latent_denoiser,
    vae_train,
)
from .measurement import Observation, PilotBlock, PilotError, make_pilots, observe, real_operator
from .report_export import ResultsFormatError, plot_results, read_results

__all__ = [
    # Channels and measurement
    "ChannelDataset",
    "DatasetError",
    "DatasetVersionError",
    "TruncatedPayloadError",
    "generate_dataset",
    "generate_named_dataset",
    "import_channels",
    "load_dataset",
    "mix_datasets",
    "sample_covariance",
    "save_dataset",
    "split_dataset",
    "Observation",
    "PilotBlock",
    "PilotError",
    "make_pilots",
    "observe",
    "real_operator",
    # Diffusion
    "Checkpoint",
    "CheckpointError",
    "CheckpointVersionError",
    "ScheduleError",
    "ScoreModel",
    "TrainingDivergedError",
    "analytic_gaussian_score",
    "build_score_model",
    "dsm_loss",
    "load_checkpoint",
    "make_sde",
    "perturb",
    "save_checkpoint",
    "sigma",
    "train",
    "ChannelEstimate",
    "SamplerAbortError",
    "cfg_score",
    "estimate_channel",
    "posterior_sample",
    "run_predictor_corrector",
    "Condition",
    "ConditionError",
    "MaskSpecError",
    "extrapolate",
    "make_condition",
    "make_mask",
    "train_conditional",
    # Feedback
    "FeedbackError",
    "FeedbackReport",
    "PayloadFormatError",
    "VAEModel",
    "feedback_roundtrip",
    "load_vae",
    "save_vae",
    "train_latent_denoiser",
    "vae_train",
    # Baselines and reporting
    "AngularDictionary",
    "BaselineError",
    "CovarianceError",
    "build_dictionary",
    "lmmse_estimate",
    "lmmse_filter",
    "ls_estimate",
    "nmse",
    "nmse_linear",
    "omp_estimate",
    "omp_pursuit",
    "ResultsFormatError",
    "plot_results",
    "read_results",
]
