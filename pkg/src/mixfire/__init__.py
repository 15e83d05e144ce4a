"""mixfire: attention-augmented MLP-Mixer image classifier, from scratch.

A small, fully self-verified stack: a reverse-mode autodiff tensor core on
NumPy, kernelized linear attention, mixer blocks that attend along both the
token and channel axes, an EfficientNet-style convolutional tokenizer,
Grad-CAM saliency, exact-arithmetic metrics with k-fold cross-validation,
and a reproducible CLI.
"""

from .attention import (
    AttentionParams,
    BenchResult,
    attention_layer,
    bench_attention,
    dense_attention_oracle,
    init_attention_params,
    linear_attention,
    phi,
)
from .backbone import (
    BackboneConfig,
    ForwardTrace,
    ModelConfig,
    ModelParams,
    StageSpec,
    channel_scale,
    config_from_named,
    conv2d,
    default_model_config,
    forward_batch,
    forward_trace,
    fused_mbconv,
    init_model_params,
    mbconv,
    model_forward,
    se_module,
    tokenize,
)
from .data import Dataset, generate_synthetic, load_directory, save_dataset
from .evaluate import (
    ClassMetrics,
    ConfusionMatrix,
    FoldSplit,
    MetricsReport,
    classification_metrics,
    confusion_matrix,
    cross_validate,
    kfold_split,
    report_to_dict,
    report_to_json,
)
from .explain import (
    GradCamMap,
    export_heatmap,
    gradcam,
    peak_coordinates,
    quantize_map,
    upsample_nearest,
)
from .gradsuite import run_gradient_suite
from .mixer import (
    MIXER_PRESETS,
    MixerAttentionParams,
    MixerConfig,
    channel_mixing_sublayer,
    init_mixer_params,
    mixer_attention_block,
    token_mixing_sublayer,
)
from .model_io import ModelFormatError, assign_named, load_model, save_model
from .pgm import PgmFormatError, read_pgm, write_pgm
from .tensor import (
    GradTape,
    NonFiniteError,
    ShapeError,
    TapeError,
    Tensor,
    grad_check,
    no_grad,
    reset_tape,
)
from .train import (
    AdamState,
    TrainConfig,
    adam_init,
    adam_step,
    cross_entropy,
    cross_entropy_batch,
    predict,
    train,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
