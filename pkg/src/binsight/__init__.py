"""binsight: a desk-scale CNN engine with per-layer binary/full precision
and a toolkit for comparing gradient-based saliency methods across the
two network types."""

__version__ = "0.1.0"

from .autodiff import (GradientSet, ShapeError, Tape, Tensor, backward,
                       conv2d, dense, finite_diff_gradient, hardtanh,
                       log_softmax, maxpool2d, relu, sign_binarize,
                       ste_backward)
from .data import Dataset, IdxFormatError, gen_shapes, load_idx, save_idx
from .net import (DefError, ForwardTrace, LayerSpec, ModelFormatError,
                  Network, NetworkDef, bnn_variant, build_network,
                  class_score, forward, fp_variant, last_conv_output,
                  load_model, save_model)
from .train import (TrainConfig, TrainingDiverged, cross_entropy, evaluate,
                    train)
from .saliency import (SaliencyMap, bilinear_upsample, gradcam,
                       gradient_map_raw, normalize_map, smoothgrad,
                       vanilla_gradient)
from .analysis import (AmplificationProfile, DEFAULT_NOISE_LEVELS,
                       SweepResult, amplification_profile, noise_sweep,
                       optimal_noise, pearson, randomization_sanity,
                       spearman, total_variation)
from .config import ExperimentConfig, ConfigError, load_config, micro16

__all__ = [name for name in dir() if not name.startswith("_")]
