"""rainstack: differentiable statistical fusion and pseudo-label stacking
for video deraining.

The package provides smooth order statistics with analytic gradients, the
dynamic stacking filter (DSF) that interpolates between mean/median/min/max,
flow-based frame alignment, masked temporal median stacking with all
training loss terms, a forward-only reference of the dual-branch
state-space model, synthetic rain generation, and frame/flow I/O with
PSNR/SSIM metrics.
"""

from ._accel import NUMBA_AVAILABLE, numba_enabled
from .dsf import DsfParams, as_feature_stack, dsf_grad, dsf_map, dsf_scalar
from .flow_warp import (
    WarpResult,
    backward_warp,
    flow_transfer_loss,
    synth_translation_flow,
)
from .frame_io import (
    FlowField,
    FrameSequence,
    PSNR_CAP_DB,
    compute_psnr,
    compute_ssim,
    ensure_image,
    load_frame_dir,
    load_image,
    read_flow,
    save_frame_dir,
    save_image,
    write_flow,
)
from .model import (
    LayerParams,
    ModelConfig,
    ModelParams,
    S3mlParams,
    SsmParams,
    TsmlParams,
    bilinear_resize,
    conv3,
    depthwise_conv5,
    from_named_tensors,
    init_params,
    layer_norm,
    linear,
    named_tensors,
    pointwise_conv1,
    s3ml_forward,
    selective_scan,
    selective_scan_reference,
    silu,
    tsml_forward,
    vdmamba_forward,
    zero_params,
)
from .params_io import (
    load_model_params,
    read_params_file,
    save_model_params,
    write_params_file,
)
from .rain_synth import RainConfig, add_rain, make_rainy_sequence, synth_rain_layer
from .smooth_stats import (
    GRAD_SAFE_SHARPNESS,
    exact_max,
    exact_mean,
    exact_median,
    exact_min,
    mad_profile,
    mean_abs_deviation,
    median_mad_oracle,
    soft_abs,
    soft_argmax_weights,
    soft_max,
    soft_median,
    soft_min,
    soft_stat_grad,
)
from .stacking import (
    LossWeights,
    StackingConfig,
    StackingMask,
    generate_pseudo_labels,
    patch_mask,
    reconstruction_losses,
    render_mask_overlay,
    stacking_loss,
    temporal_loss,
    temporal_median,
    total_loss,
)

__version__ = "0.1.0"

__all__ = [
    "NUMBA_AVAILABLE",
    "numba_enabled",
    "DsfParams",
    "as_feature_stack",
    "dsf_grad",
    "dsf_map",
    "dsf_scalar",
    "WarpResult",
    "backward_warp",
    "flow_transfer_loss",
    "synth_translation_flow",
    "FlowField",
    "FrameSequence",
    "PSNR_CAP_DB",
    "compute_psnr",
    "compute_ssim",
    "ensure_image",
    "load_frame_dir",
    "load_image",
    "read_flow",
    "save_frame_dir",
    "save_image",
    "write_flow",
    "LayerParams",
    "ModelConfig",
    "ModelParams",
    "S3mlParams",
    "SsmParams",
    "TsmlParams",
    "bilinear_resize",
    "conv3",
    "depthwise_conv5",
    "from_named_tensors",
    "init_params",
    "layer_norm",
    "linear",
    "named_tensors",
    "pointwise_conv1",
    "s3ml_forward",
    "selective_scan",
    "selective_scan_reference",
    "silu",
    "tsml_forward",
    "vdmamba_forward",
    "zero_params",
    "load_model_params",
    "read_params_file",
    "save_model_params",
    "write_params_file",
    "RainConfig",
    "add_rain",
    "make_rainy_sequence",
    "synth_rain_layer",
    "GRAD_SAFE_SHARPNESS",
    "exact_max",
    "exact_mean",
    "exact_median",
    "exact_min",
    "mad_profile",
    "mean_abs_deviation",
    "median_mad_oracle",
    "soft_abs",
    "soft_argmax_weights",
    "soft_max",
    "soft_median",
    "soft_min",
    "soft_stat_grad",
    "LossWeights",
    "StackingConfig",
    "StackingMask",
    "generate_pseudo_labels",
    "patch_mask",
    "reconstruction_losses",
    "render_mask_overlay",
    "stacking_loss",
    "temporal_loss",
    "temporal_median",
    "total_loss",
    "__version__",
]
