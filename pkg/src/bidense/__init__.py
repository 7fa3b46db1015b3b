"""Binarized dense-prediction networks: bit-packed XNOR kernels, adaptive binarizers,
channel-fusion bypasses, a small autodiff trainer and evaluation metrics."""

from .binarize import (VARIANTS, BinarizerKind, Dab, Elastic, LearnedThreshold, PlainSign,
                       binarize_activations, binarize_weights, binary_entropy, channel_entropy,
                       optimal_alpha, scale_dab, threshold_dab)
from .cfb import FusionPlan, align_spatial, apply_fusion, fusion_down, fusion_up, plan_fusion
from .metrics import DepthScores, SegScores, depth_scores, seg_scores
from .network import (BiDenseConvLayer, BiDenseModel, Context, CostReport, ModelConfig,
                      build_model, count_costs, layer_entropies)
from .tensor import BitTensor, binary_conv2d, pack_signs, real_conv2d, unpack_signs, xnor_dot
from .train import TrainConfig, adamw_step, grad_check, onecycle_lr, silog_loss, train_loop

__version__ = "0.1.0"
