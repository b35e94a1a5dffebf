from .layers import (
    BatchNorm,
    BiGru,
    Conv2d,
    FrameFlatten,
    GlobalMaxPool,
    Grl,
    Layer,
    LeakyReLU,
    Linear,
    MaxPool2d,
    Param,
)
from .losses import (
    LossWeights,
    event_bce_loss,
    mtl_loss,
    scene_ce_loss,
    sigmoid,
    softmax,
)
from .optim import RAdam
from .gradcheck import finite_difference_check
from .checkpoint import load_params, save_params

__all__ = [
    "BatchNorm", "BiGru", "Conv2d", "FrameFlatten", "GlobalMaxPool", "Grl",
    "Layer", "LeakyReLU", "Linear", "MaxPool2d", "Param", "LossWeights",
    "event_bce_loss", "mtl_loss", "scene_ce_loss", "sigmoid", "softmax",
    "RAdam", "finite_difference_check", "load_params", "save_params",
]
