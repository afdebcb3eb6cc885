"""Verified longitudinal lesion tracking workbench."""

from .core import (
    DeformationField,
    InstanceMask,
    LongitudinalCase,
    PromptPoint,
    Role,
    Volume,
    centroid,
    crop_pad,
    crop_pad_labels,
    jacobian_determinant,
    warp_mask,
    warp_volume,
)
from .errors import (
    AlignmentError,
    ConfigError,
    EmptyInput,
    EmptyTaskError,
    GenerationError,
    LongitrackError,
    MissingField,
    MissingLesion,
    OutOfBounds,
    ParseError,
    ShapeError,
)
from .estimator import LongitudinalSegmenter
from .harness import (
    AblationRow,
    ExperimentSpec,
    RegistrationSpec,
    run_ablation,
    run_paradigm_eval,
    split_cases,
)
from .manifest import load_manifest, save_manifest
from .metrics import MetricsReport, bootstrap, build_report, dsc, ldr, nsd
from .net import DualTimepointUNet, FusionMode, NetConfig, diff_weight, fuse_input
from .prompts import (
    PromptHeatmap,
    choose_training_prompt,
    gaussian_heatmap,
    sample_mask_prompt,
    simulate_registered_prompt,
)
from .registration import (
    AffineConfig,
    RegistrationResult,
    affine_register,
    apply_field,
    propose_followup_prompt,
    truth_with_noise,
)
from .synth import (
    GrowthMode,
    GrowthParams,
    generate_dataset,
    generate_phantom,
    make_ambiguity_case,
    make_standard_case,
    synthesize_followup,
)
from .train import TrainConfig, dice_ce_loss, fit, pretrain_finetune

__version__ = "0.1.0"

__all__ = [
    "AblationRow",
    "AffineConfig",
    "AlignmentError",
    "ConfigError",
    "DeformationField",
    "DualTimepointUNet",
    "EmptyInput",
    "EmptyTaskError",
    "ExperimentSpec",
    "FusionMode",
    "GenerationError",
    "GrowthMode",
    "GrowthParams",
    "InstanceMask",
    "LongitrackError",
    "LongitudinalCase",
    "LongitudinalSegmenter",
    "MetricsReport",
    "MissingField",
    "MissingLesion",
    "NetConfig",
    "OutOfBounds",
    "ParseError",
    "PromptHeatmap",
    "PromptPoint",
    "RegistrationResult",
    "RegistrationSpec",
    "Role",
    "ShapeError",
    "TrainConfig",
    "Volume",
    "affine_register",
    "apply_field",
    "bootstrap",
    "build_report",
    "centroid",
    "choose_training_prompt",
    "crop_pad",
    "crop_pad_labels",
    "diff_weight",
    "dice_ce_loss",
    "dsc",
    "fit",
    "fuse_input",
    "gaussian_heatmap",
    "generate_dataset",
    "generate_phantom",
    "jacobian_determinant",
    "ldr",
    "load_manifest",
    "make_ambiguity_case",
    "make_standard_case",
    "nsd",
    "pretrain_finetune",
    "propose_followup_prompt",
    "run_ablation",
    "run_paradigm_eval",
    "sample_mask_prompt",
    "save_manifest",
    "simulate_registered_prompt",
    "split_cases",
    "synthesize_followup",
    "truth_with_noise",
    "warp_mask",
    "warp_volume",
]
