"""
Neural network package: a numpy reverse-mode engine, T-Net, the SPP patch
classifier, losses, Adam with the halving schedule, gradient checks and the
NNW1 model format.
"""
from histotnet.nn.autograd import (
    Tensor,
    avg_pool2,
    concat,
    conv2d,
    crop_spatial,
    dense,
    max_pool2,
    relu,
    sigmoid,
    softmax,
    spp,
    spp_length,
    upsample2,
    weighted_sum,
)
from histotnet.nn.boundary import boundary_set, boundary_weights, boundary_weights_reference
from histotnet.nn.bundle import ModelBundle, bundle_of, load_model, load_network, save_model
from histotnet.nn.classifier import PatchClassifier, build_classifier
from histotnet.nn.gradcheck import GradcheckReport, check_gradients, gradcheck
from histotnet.nn.layers import (
    SPP,
    AvgPool2,
    Conv2d,
    Dense,
    LayerSpec,
    MaxPool2,
    Module,
    ReLU,
    Sequential,
    Upsample2,
    architectures,
    backward,
    build_from_descriptor,
    forward,
    register_architecture,
)
from histotnet.nn.losses import EPS, binary_logloss, softmax_ce, weighted_boundary_logloss
from histotnet.nn.optim import Adam, OptimizerState, adam_step, lr_at
from histotnet.nn.tnet import TNet, TNetSpec, UNet, build_tnet, copy_weights
from histotnet.nn.train import (
    ClassifierTrainConfig,
    FoldResult,
    SegLoss,
    SegMode,
    TrainConfig,
    TrainHistory,
    kfold_train,
    predict_patches,
    segment,
    segment_tiled,
    train_classifier,
    train_segmentation,
)

__all__ = [
    "Adam",
    "AvgPool2",
    "ClassifierTrainConfig",
    "Conv2d",
    "Dense",
    "EPS",
    "FoldResult",
    "GradcheckReport",
    "LayerSpec",
    "MaxPool2",
    "ModelBundle",
    "Module",
    "OptimizerState",
    "PatchClassifier",
    "ReLU",
    "SPP",
    "SegLoss",
    "SegMode",
    "Sequential",
    "TNet",
    "TNetSpec",
    "Tensor",
    "TrainConfig",
    "TrainHistory",
    "UNet",
    "Upsample2",
    "adam_step",
    "architectures",
    "avg_pool2",
    "backward",
    "binary_logloss",
    "boundary_set",
    "boundary_weights",
    "boundary_weights_reference",
    "build_classifier",
    "build_from_descriptor",
    "build_tnet",
    "bundle_of",
    "check_gradients",
    "concat",
    "conv2d",
    "copy_weights",
    "crop_spatial",
    "dense",
    "forward",
    "gradcheck",
    "kfold_train",
    "load_model",
    "load_network",
    "lr_at",
    "max_pool2",
    "predict_patches",
    "register_architecture",
    "relu",
    "save_model",
    "segment",
    "segment_tiled",
    "sigmoid",
    "softmax",
    "softmax_ce",
    "spp",
    "spp_length",
    "train_classifier",
    "train_segmentation",
    "upsample2",
    "weighted_boundary_logloss",
    "weighted_sum",
]
