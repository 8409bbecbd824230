"""Minimal reverse-mode neural toolkit (numpy, double precision)."""

import numpy as np

from .layers import (
    AvgPool2D,
    BatchNorm,
    Conv2D,
    Deconv2D,
    Dense,
    Flatten,
    LAYER_TYPES,
    Layer,
    LeakyReLU,
    MaxPool2D,
    MixedPool2D,
    ReLU,
    Reshape,
    Sequential,
    Sigmoid,
    layer_from_spec,
    register,
)
from .optim import AdamState, RmsPropState, adam_step, rmsprop_step
from .gradcheck import GradCheckReport, grad_check, linear_loss, rel_error, squared_loss


def forward(net, x, mode="train"):
    """Functional alias: ``(output, cache)``."""
    return net.forward(x, mode == "train")


def backward(net, cache, upstream):
    """Functional alias: ``(input_grad, parameter_grads)``."""
    return net.backward(cache, upstream)


def mse_loss(pred, target):
    """Mean squared error over every element and its gradient."""
    d = pred - target
    return float(np.mean(d * d)), 2.0 * d / d.size


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy; returns (loss, dlogits)."""
    p = softmax(logits)
    n = len(labels)
    loss = -float(np.mean(np.log(p[np.arange(n), labels] + 1e-300)))
    d = p.copy()
    d[np.arange(n), labels] -= 1.0
    return loss, d / n

