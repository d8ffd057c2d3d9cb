"""Online-learned discriminative target models for video object segmentation."""

from .augmentation import AugmentationParams, generate_initial_set, inpaint_background, random_affine_blur
from .features_io import (
    FeatureFileError,
    extract_handcrafted_features,
    read_feature_map,
    write_feature_map,
)
from .memory import SampleMemory, extend, init_memory, normalized_weights
from .metrics import EvalReport, boundary_f, evaluate_sequence, jaccard
from .ops import (
    ConvKernel,
    DimensionError,
    FeatureMap,
    ScoreMap,
    bilinear_upsample,
    bilinear_upsample_adjoint,
    conv2d,
    conv2d_adjoint,
    kernel_grad_adjoint,
)
from .optimizer import (
    FREE_BOTH,
    FREE_W2,
    NumericalError,
    OptimizerSchedule,
    cg_solve,
    compute_loss,
    gn_step,
    normal_operator_apply,
    optimize,
    pixel_weight_mask,
    schedule_preset,
)
from .pipeline import (
    PipelineConfig,
    RunStats,
    aggregate_multi_object,
    aggregate_probabilities,
    initialize_targets,
    run_sequence,
)
from .target_model import TargetWeights, forward, init_weights, predict_mask

__version__ = "0.1.0"
