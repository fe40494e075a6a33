"""Minimal tensor core with reverse-mode autodiff and the classification network."""
from . import checkpoint, functional
from .functional import (
    add,
    class_weights,
    concat,
    conv2d,
    cross_entropy,
    global_avg_pool,
    linear,
    log_softmax,
    mul,
    relu,
    softmax,
    upsample_nearest2x,
)
from .layers import (
    FPN,
    LEVELS,
    PYRAMID,
    Backbone,
    BackboneConfig,
    ClassifierHead,
    Conv2d,
    FpnConfig,
    Linear,
    MalwareNet,
    Module,
    NetConfig,
    classify_head,
    forward_backbone,
    fpn_fuse,
)
from .tensor import Tensor, as_tensor

__all__ = [
    "FPN", "LEVELS", "PYRAMID", "Backbone", "BackboneConfig", "ClassifierHead", "Conv2d",
    "FpnConfig", "Linear", "MalwareNet", "Module", "NetConfig", "Tensor", "add", "as_tensor",
    "checkpoint", "class_weights", "classify_head", "concat", "conv2d", "cross_entropy",
    "forward_backbone", "fpn_fuse", "functional", "global_avg_pool", "linear", "log_softmax",
    "mul", "relu", "softmax", "upsample_nearest2x",
]
