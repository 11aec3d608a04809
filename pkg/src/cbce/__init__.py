"""Phrase-conditioned affordance segmentation at desk scale.

A from-scratch numpy stack: a small reverse-mode autodiff engine, a
multi-level vision/language fusion network with cyclic bilateral
interaction, the five standard mask-quality metrics, a synthetic shape
dataset, and the training/evaluation loop that ties them together.
"""

from .cim import Cim, CimState, Lvm, Vlm
from .convops import (
    avg_pool2d,
    bilinear_upsample,
    conv2d,
    depthwise_conv2d,
    depthwise_separable_conv,
    global_avg_pool,
)
from .encoders import FeaturePyramid, PhraseEncoder, PhraseSet, VisualEncoder, Vocabulary
from .fusion import BilinearFusion, build_initial_fused, spatial_coords
from .gradcheck import GradCheckReport, grad_check, run_suite
from .metrics import MetricReport, e_measure, evaluate_dataset, f_measure, iou, mae, pearson_cc
from .model import CbceNet, ModelConfig
from .optim import AdamState, adam_step, poly_lr
from .seghead import Aspp, MaskPrediction, SegHead, bce_loss, concat_levels
from .tensor import (
    Graph,
    GraphConsumedError,
    NumericError,
    ShapeError,
    Tensor,
    backward,
)
from .train import TrainConfig, evaluate_checkpoint, infer, load_config, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Aspp", "BilinearFusion", "CbceNet", "Cim", "CimState",
    "FeaturePyramid", "GradCheckReport", "Graph", "GraphConsumedError", "Lvm",
    "MaskPrediction", "MetricReport", "ModelConfig", "NumericError",
    "PhraseEncoder", "PhraseSet", "SegHead", "ShapeError", "Tensor",
    "TrainConfig", "VisualEncoder", "Vlm", "Vocabulary", "adam_step",
    "avg_pool2d", "backward", "bce_loss", "bilinear_upsample",
    "build_initial_fused", "concat_levels", "conv2d", "depthwise_conv2d",
    "depthwise_separable_conv", "e_measure", "evaluate_checkpoint",
    "evaluate_dataset", "f_measure", "global_avg_pool", "grad_check", "infer",
    "iou", "load_config", "mae", "pearson_cc", "poly_lr", "run_suite",
    "spatial_coords", "train",
]
