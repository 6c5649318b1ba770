"""Attentional fusion of the two stream outputs.

The attention module reads the feature-masking map, applies a 3x3 and a 1x1
convolution, and softmaxes the two output channels into weight maps W1, W2
with W1 + W2 = 1.  The fused map S = W1*S1 + W2*S2 is computed at 1/8
resolution and upsampled afterwards.  Average and 1x1-conv fusion remain
selectable for the ablation comparison.
"""

import numpy as np

from .network import STRIDE_TOTAL
from .tensor import (
    Tensor, add, bilinear_resize, conv2d, mul, relu, sigmoid, softmax_channels,
)

FUSION_MODES = ("attention", "average", "conv1x1")


def attention_forward(feature_map, store, spec):
    """Two-channel softmax weight maps from the feature-masking map."""
    specs = dict(spec.layer_specs())
    x = relu(conv2d(feature_map, store["attn.conv1.w"], store["attn.conv1.b"],
                    specs["attn.conv1"]))
    logits = conv2d(x, store["attn.conv2.w"], store["attn.conv2.b"],
                    specs["attn.conv2"])
    return softmax_channels(logits)


def _slice_channel(t, c):
    out = Tensor(t.data[:, c:c + 1])
    if t.requires_grad or t._parents:
        def backward(g):
            full = np.zeros_like(t.data)
            full[:, c:c + 1] = g
            return (full,)
        out._parents = (t,)
        out._backward = backward
    return out


def fuse_saliency(s1_eighth, s2_eighth, attn_weights):
    """S = W1 .* S1 + W2 .* S2 at 1/8 resolution (all (1, ., h, w) Tensors)."""
    if s1_eighth.data.shape != s2_eighth.data.shape:
        raise ValueError(
            f"stream map dims differ: {s1_eighth.data.shape} vs "
            f"{s2_eighth.data.shape}"
        )
    if attn_weights.data.shape[2:] != s1_eighth.data.shape[2:]:
        raise ValueError(
            f"attention dims {attn_weights.data.shape[2:]} do not match "
            f"stream dims {s1_eighth.data.shape[2:]}"
        )
    w1 = _slice_channel(attn_weights, 0)
    w2 = _slice_channel(attn_weights, 1)
    return add(mul(w1, s1_eighth), mul(w2, s2_eighth))


def fuse_average(s1_eighth, s2_eighth):
    return add(mul(s1_eighth, Tensor(0.5)), mul(s2_eighth, Tensor(0.5)))


def fuse_conv1x1(s1_eighth, s2_eighth, store, spec):
    """Content-independent 1x1-conv fusion over the stacked stream maps."""
    from .tensor import ConvSpec, stack_channels
    stacked = stack_channels([s1_eighth, s2_eighth])
    cs = ConvSpec.same(2, 1, 1)
    return sigmoid(conv2d(stacked, store["fusion1x1.w"], store["fusion1x1.b"], cs))


def upsample_fused(s_eighth, out_h, out_w):
    return bilinear_resize(s_eighth, out_h, out_w)


def downsample_by_area(map2d, factor=STRIDE_TOTAL):
    """Area-average downsampling of an (H, W) map by an integer factor."""
    h, w = map2d.shape
    if h % factor or w % factor:
        raise ValueError(f"dims {h}x{w} not divisible by {factor}")
    return map2d.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
