"""Toy multi-scale fully convolutional stream.

A VGG-style backbone of 5 stages whose last two pools keep stride 1, so the
total downsampling factor is 8.  Stage-5 convolutions are dilated by 2 and
the two converted head layers by 4.  Four side branches attached after the
first four pools produce single-channel maps at 1/8 resolution; these are
stacked with the backbone output map and fused by a final 1x1 convolution
into the dense saliency map S1.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ConvSpec, Tensor, bilinear_resize, conv2d, max_pool2d, relu, sigmoid,
    stack_channels, uniform_init,
)
from .weights import WeightStore

POOL_STRIDES = (2, 2, 2, 1, 1)
SIDE_STRIDES = (4, 2, 1, 1)
STRIDE_TOTAL = 8


class NetworkSpecError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    stage_convs: tuple = (2, 2, 3, 3, 3)
    stage_channels: tuple = (8, 16, 32, 64, 64)
    pool_strides: tuple = POOL_STRIDES
    side_strides: tuple = SIDE_STRIDES
    side_channels: int = 16
    head_channels: int = 64
    attn_channels: int = 32

    def validate(self):
        if len(self.stage_convs) != 5 or len(self.stage_channels) != 5:
            raise NetworkSpecError("backbone must have exactly 5 stages")
        if self.pool_strides != POOL_STRIDES:
            raise NetworkSpecError(
                f"pool strides must be {POOL_STRIDES} (total downsampling 8), "
                f"got {self.pool_strides}"
            )
        if len(self.side_strides) != 4:
            raise NetworkSpecError(
                f"exactly 4 side branches required, got {len(self.side_strides)}"
            )
        if self.side_strides != SIDE_STRIDES:
            raise NetworkSpecError(
                f"side-branch first-layer strides must be {SIDE_STRIDES}, "
                f"got {self.side_strides}"
            )
        if min(self.stage_convs) < 1 or min(self.stage_channels) < 1:
            raise NetworkSpecError("stage conv counts and widths must be positive")
        return self

    def stage_dilation(self, stage):
        # stages after a stride-1 pool are dilated to keep receptive fields
        return 2 if stage > 0 and self.pool_strides[stage - 1] == 1 else 1

    @property
    def feature_channels(self):
        """Channel count of the feature masking layer (last stage-5 conv)."""
        return self.stage_channels[4]

    def layer_specs(self):
        """Ordered (name, ConvSpec) pairs for every parameterized layer."""
        out = []
        in_ch = 3
        for s in range(5):
            dil = self.stage_dilation(s)
            ch = self.stage_channels[s]
            for c in range(self.stage_convs[s]):
                out.append((f"stage{s + 1}.conv{c + 1}",
                            ConvSpec.same(in_ch, ch, 3, dilation=dil)))
                in_ch = ch
        for b in range(4):
            src = self.stage_channels[b]
            stride = self.side_strides[b]
            sc = self.side_channels
            out.append((f"side{b + 1}.conv1", ConvSpec.same(src, sc, 3, stride=stride)))
            out.append((f"side{b + 1}.conv2", ConvSpec.same(sc, sc, 1)))
            out.append((f"side{b + 1}.conv3", ConvSpec.same(sc, 1, 1)))
        hc = self.head_channels
        out.append(("head.conv1", ConvSpec.same(self.stage_channels[4], hc, 3,
                                                dilation=4)))
        out.append(("head.conv2", ConvSpec.same(hc, hc, 1)))
        out.append(("head.conv3", ConvSpec.same(hc, 1, 1)))
        out.append(("fuse.conv", ConvSpec.same(5, 1, 1)))
        out.append(("attn.conv1", ConvSpec.same(self.stage_channels[4],
                                                self.attn_channels, 3)))
        out.append(("attn.conv2", ConvSpec.same(self.attn_channels, 2, 1)))
        return out

    def parameter_count(self):
        total = 0
        for _, spec in self.layer_specs():
            total += int(np.prod(spec.weight_shape)) + spec.out_channels
        return total


def build_msfcn(spec: NetworkSpec, seed):
    """Allocate and initialize all stream-1 parameters (plus the attention
    module trained jointly with it).  Same seed yields identical weights."""
    spec.validate()
    rng = np.random.default_rng(seed)
    store = WeightStore()
    for name, cs in spec.layer_specs():
        fan_in = cs.in_channels * cs.kernel_h * cs.kernel_w
        fan_out = cs.out_channels * cs.kernel_h * cs.kernel_w
        store.add(f"{name}.w", uniform_init(cs.weight_shape, fan_in, fan_out, rng))
        store.add(f"{name}.b", Tensor(np.zeros(cs.out_channels), requires_grad=True))
    return store


def _apply(store, specs, name, x, activation=True):
    y = conv2d(x, store[f"{name}.w"], store[f"{name}.b"], specs[name])
    return relu(y) if activation else y


def forward_msfcn(store, spec: NetworkSpec, image):
    """Run stream 1 on a (1, 3, H, W) image with H, W divisible by 8.

    Returns (s1 at HxW, s1 at 1/8, feature-masking map at 1/8); all Tensors.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    _, _, h, w = x.data.shape
    if h % STRIDE_TOTAL or w % STRIDE_TOTAL:
        raise ValueError(
            f"input dims {h}x{w} not divisible by {STRIDE_TOTAL}; "
            "pad the image first (see pipeline.pad_image)"
        )
    specs = dict(spec.layer_specs())
    side_maps = []
    feature_map = None
    for s in range(5):
        for c in range(spec.stage_convs[s]):
            x = _apply(store, specs, f"stage{s + 1}.conv{c + 1}", x)
        if s == 4:
            feature_map = x  # toy analog of Conv5_3
        stride = spec.pool_strides[s]
        x = max_pool2d(x, window=2, stride=stride, same_pad=(stride == 1))
        if s < 4:
            branch = _apply(store, specs, f"side{s + 1}.conv1", x)
            branch = _apply(store, specs, f"side{s + 1}.conv2", branch)
            branch = _apply(store, specs, f"side{s + 1}.conv3", branch,
                            activation=False)
            side_maps.append(branch)
    head = _apply(store, specs, "head.conv1", x)
    head = _apply(store, specs, "head.conv2", head)
    head = _apply(store, specs, "head.conv3", head, activation=False)
    stacked = stack_channels(side_maps + [head])
    s1_eighth = sigmoid(_apply(store, specs, "fuse.conv", stacked,
                               activation=False))
    s1 = bilinear_resize(s1_eighth, h, w)
    return s1, s1_eighth, feature_map


def single_scale_forward(store, spec, image):
    """Backbone-only ablation: side-branch head weights zeroed out."""
    ablated = store.copy()
    for b in range(4):
        ablated[f"side{b + 1}.conv3.w"].data[:] = 0.0
        ablated[f"side{b + 1}.conv3.b"].data[:] = 0.0
    return forward_msfcn(ablated, spec, image)


MULTISCALE_FACTORS = (1.0, 0.75, 0.5)


def multiscale_infer(store, spec, image):
    """Forward at scales 1 / 0.75 / 0.5 and take the per-pixel maximum of
    the rescaled saliency maps."""
    img = image if isinstance(image, Tensor) else Tensor(image)
    _, _, h, w = img.data.shape
    best = None
    for f in MULTISCALE_FACTORS:
        sh = max(STRIDE_TOTAL, int(round(h * f / STRIDE_TOTAL)) * STRIDE_TOTAL)
        sw = max(STRIDE_TOTAL, int(round(w * f / STRIDE_TOTAL)) * STRIDE_TOTAL)
        scaled = bilinear_resize(Tensor(img.data), sh, sw)
        s1, _, _ = forward_msfcn(store, spec, scaled)
        restored = bilinear_resize(Tensor(s1.data), h, w).data
        best = restored if best is None else np.maximum(best, restored)
    return best[0, 0]


def prepare_contour_gt(gt_mask):
    """Label salient-region pixels with a 4-neighbor outside the region (the
    image border counts as outside)."""
    m = (np.asarray(gt_mask) >= 0.5).astype(np.float64)
    padded = np.pad(m, 1)
    interior = (
        (padded[:-2, 1:-1] > 0) & (padded[2:, 1:-1] > 0)
        & (padded[1:-1, :-2] > 0) & (padded[1:-1, 2:] > 0)
    )
    return m * ~interior
