"""Truss modal dataset synthesis and a variational graph autoencoder for
joint prediction of natural frequencies, damping ratios and mode shapes with
decomposed, calibrated uncertainty."""

from .data import (
    DatasetManifest,
    GraphSample,
    NormStats,
    TargetTransform,
    apply_normalization,
    build_graph,
    fit_normalization,
    mask_sensors,
    read_dataset,
    write_dataset,
)
from .evaluation import (
    CalibrationReport,
    EvalReport,
    StudyResult,
    compare_models,
    coverage_curve,
    ece,
    evaluate,
    noise_study,
    predict_baseline,
    predict_vgae,
    sparsity_study,
)
from .model import BaselineGNN, ModalVGAE, ModelConfig, build_baseline, build_model
from .response import ExcitationSpec, NodePSDMatrix, WelchConfig, add_noise, downsample_psd, welch_psd
from .synthesis import SynthesisConfig, synthesize_dataset
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train, train_baseline
from .truss import ModalSolution, SystemMatrices, TrussGenConfig, TrussModel, analyze, generate_truss
from .uq import (
    NIGParams,
    PredictiveSummary,
    SWAGPosterior,
    UQConfig,
    combine_uncertainty,
    confidence_interval,
    mc_dropout_predict,
    predictive_moments,
    student_t_logpdf,
    swag_collect,
    swag_predict,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
