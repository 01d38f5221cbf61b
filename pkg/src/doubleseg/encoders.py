"""Toy-scale encoder families.

Three downsampling backbones, each reduced to the mechanism that
distinguishes it:

* ``mobile_like`` — inverted residual blocks built on depthwise separable
  convolutions, with shortcuts between the narrow ends and no nonlinearity
  after the projection.
* ``res_like``    — classic two-conv residual blocks with an identity (or
  projected) bypass.
* ``dpn_like``    — dual-path blocks that keep an additive residual stream
  and a growing concatenative dense stream side by side.

All families share the same shape law: a stride-1 stem produces level 0 at
full resolution, then each stage halves the spatial dims and doubles the
channel budget, yielding a feature pyramid at strides 1, 2, 4, ...
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import BatchNorm2d, Conv2d, ConvNormRelu, Layer, LayerList

FAMILIES = ("mobile_like", "res_like", "dpn_like")


@dataclass
class EncoderConfig:
    family: str = "res_like"
    in_channels: int = 3
    width: int = 8
    stages: int = 4

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown encoder family {self.family!r}; "
                             f"choose from {FAMILIES}")
        if self.in_channels not in (3, 4):
            raise ValueError(f"in_channels must be 3 or 4, got {self.in_channels}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.stages < 2:
            raise ValueError(f"stages must be >= 2, got {self.stages}")


@dataclass
class FeaturePyramid:
    """Per-stage feature maps; level i lives at stride 2**i."""

    levels: list = field(default_factory=list)

    def __post_init__(self):
        for i in range(1, len(self.levels)):
            prev, cur = self.levels[i - 1].shape, self.levels[i].shape
            if cur[0] != prev[0] or cur[2] * 2 != prev[2] or cur[3] * 2 != prev[3]:
                raise T.ShapeError(
                    f"pyramid level {i} has shape {cur}, expected half the "
                    f"spatial dims of level {i - 1} {prev}")

    @property
    def channels(self):
        return [lvl.shape[1] for lvl in self.levels]

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]


class InvertedResidual(Layer):
    """expand 1x1 -> depthwise 3x3 -> project 1x1, linear bottleneck.

    The additive shortcut exists only when stride is 1 and the channel count
    is unchanged; the projection has no activation after it.
    """

    def __init__(self, rng, cin, cout, expansion=4, stride=1):
        super().__init__()
        if expansion < 1:
            raise ValueError(f"expansion must be >= 1, got {expansion}")
        ce = cin * expansion
        self.expand = ConvNormRelu(rng, cin, ce, k=1)
        self.depthwise = ConvNormRelu(rng, ce, ce, k=3, stride=stride, groups=ce)
        self.project = ConvNormRelu(rng, ce, cout, k=1, act=False)
        self.use_shortcut = stride == 1 and cin == cout

    def __call__(self, x):
        out = self.project(self.depthwise(self.expand(x)))
        if self.use_shortcut:
            out = T.add(out, x)
        return out


class ResidualBlock(Layer):
    """Two 3x3 convolutions with a bypass so information can flow unaltered."""

    def __init__(self, rng, cin, cout, stride=1):
        super().__init__()
        self.conv1 = ConvNormRelu(rng, cin, cout, k=3, stride=stride)
        self.conv2 = ConvNormRelu(rng, cout, cout, k=3, act=False)
        if stride != 1 or cin != cout:
            self.shortcut = ConvNormRelu(rng, cin, cout, k=1, stride=stride,
                                         act=False)
        else:
            self.shortcut = None

    def __call__(self, x):
        branch = self.conv2(self.conv1(x))
        skip = self.shortcut(x) if self.shortcut is not None else x
        return T.relu(T.add(branch, skip))


class DualPathBlock(Layer):
    """Shared bottleneck feeding both a residual and a dense path.

    The bottleneck transforms concat(x_res, x_dense) and its output is split:
    the first ``cout_res`` channels are added to the residual stream, the
    remaining ``inc`` channels extend the dense stream.  With stride > 1 the
    residual stream is projected and the dense stream restarts from the new
    slice (features at the old resolution cannot be concatenated).
    """

    def __init__(self, rng, cin_res, cin_dense, cout_res, inc, stride=1, mid=None):
        super().__init__()
        cin = cin_res + cin_dense
        mid = mid or cout_res
        self.cout_res = cout_res
        self.inc = inc
        self.stride = stride
        self.reduce = ConvNormRelu(rng, cin, mid, k=1)
        self.spatial = ConvNormRelu(rng, mid, mid, k=3, stride=stride)
        self.grow = ConvNormRelu(rng, mid, cout_res + inc, k=1, act=False)
        if stride != 1 or cin_res != cout_res:
            self.shortcut = ConvNormRelu(rng, cin_res, cout_res, k=1,
                                         stride=stride, act=False)
        else:
            self.shortcut = None

    def __call__(self, x_res, x_dense=None):
        if x_dense is not None:
            if x_dense.shape[0] != x_res.shape[0] or x_dense.shape[2:] != x_res.shape[2:]:
                raise T.ShapeError(
                    f"dual-path streams disagree: res {x_res.shape} vs "
                    f"dense {x_dense.shape}")
            joint = T.concat_channels([x_res, x_dense])
        else:
            joint = x_res
        out = self.grow(self.spatial(self.reduce(joint)))
        if out.shape[1] != self.cout_res + self.inc:
            raise T.ShapeError(
                f"transform emitted {out.shape[1]} channels, cannot split "
                f"into {self.cout_res} residual + {self.inc} dense")
        res_slice = T.slice_channels(out, 0, self.cout_res)
        dense_slice = T.slice_channels(out, self.cout_res, self.cout_res + self.inc)
        skip = self.shortcut(x_res) if self.shortcut is not None else x_res
        res_out = T.add(skip, res_slice)
        if self.stride == 1 and x_dense is not None:
            dense_out = T.concat_channels([x_dense, dense_slice])
        else:
            dense_out = dense_slice
        return res_out, dense_out


def _stage_widths(width: int, stages: int):
    return [width * (2 ** i) for i in range(stages)]


class _EncoderBase(Layer):
    """Shared stem/shape handling; subclasses fill in the staged blocks."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.level_channels: list[int] = []

    def _check_input(self, x):
        n, c, h, w = x.shape
        if c != self.cfg.in_channels:
            raise T.ShapeError(f"encoder expects {self.cfg.in_channels} input "
                               f"channels, got {c}")
        div = 2 ** (self.cfg.stages - 1)
        if h % div or w % div:
            need_h = (div - h % div) % div
            need_w = (div - w % div) % div
            raise T.ShapeError(
                f"input {h}x{w} not divisible by {div}; pad {need_h} rows and "
                f"{need_w} cols (to {h + need_h}x{w + need_w}) before encoding")

    def encode(self, x) -> FeaturePyramid:
        raise NotImplementedError

    def __call__(self, x):
        return self.encode(x)


class MobileEncoder(_EncoderBase):
    def __init__(self, rng, cfg: EncoderConfig, expansion: int = 4):
        super().__init__(cfg)
        widths = _stage_widths(cfg.width, cfg.stages)
        self.stem = ConvNormRelu(rng, cfg.in_channels, widths[0], k=3)
        stages = []
        for i in range(1, cfg.stages):
            stages.append(LayerList([
                InvertedResidual(rng, widths[i - 1], widths[i], expansion, stride=2),
                InvertedResidual(rng, widths[i], widths[i], expansion, stride=1),
            ]))
        self.stages = LayerList(stages)
        self.level_channels = widths

    def encode(self, x):
        self._check_input(x)
        cur = self.stem(x)
        levels = [cur]
        for stage in self.stages:
            for block in stage:
                cur = block(cur)
            levels.append(cur)
        return FeaturePyramid(levels)


class ResEncoder(_EncoderBase):
    def __init__(self, rng, cfg: EncoderConfig):
        super().__init__(cfg)
        widths = _stage_widths(cfg.width, cfg.stages)
        self.stem = ConvNormRelu(rng, cfg.in_channels, widths[0], k=3)
        stages = []
        for i in range(1, cfg.stages):
            stages.append(LayerList([
                ResidualBlock(rng, widths[i - 1], widths[i], stride=2),
                ResidualBlock(rng, widths[i], widths[i], stride=1),
            ]))
        self.stages = LayerList(stages)
        self.level_channels = widths

    def encode(self, x):
        self._check_input(x)
        cur = self.stem(x)
        levels = [cur]
        for stage in self.stages:
            for block in stage:
                cur = block(cur)
            levels.append(cur)
        return FeaturePyramid(levels)


class DualPathEncoder(_EncoderBase):
    def __init__(self, rng, cfg: EncoderConfig):
        super().__init__(cfg)
        widths = _stage_widths(cfg.width, cfg.stages)
        self.stem = ConvNormRelu(rng, cfg.in_channels, widths[0], k=3)
        stages = []
        self.level_channels = [widths[0]]
        cin_res, cin_dense = widths[0], 0
        for i in range(1, cfg.stages):
            res_c = widths[i]
            inc = max(res_c // 4, 1)
            stages.append(LayerList([
                DualPathBlock(rng, cin_res, cin_dense, res_c, inc, stride=2),
                DualPathBlock(rng, res_c, inc, res_c, inc, stride=1),
            ]))
            cin_res, cin_dense = res_c, 2 * inc
            self.level_channels.append(res_c + cin_dense)
        self.stages = LayerList(stages)

    def encode(self, x):
        self._check_input(x)
        cur = self.stem(x)
        levels = [cur]
        res, dense = cur, None
        for stage in self.stages:
            for block in stage:
                res, dense = block(res, dense)
            levels.append(T.concat_channels([res, dense]))
        return FeaturePyramid(levels)


_BUILDERS = {
    "mobile_like": MobileEncoder,
    "res_like": ResEncoder,
    "dpn_like": DualPathEncoder,
}


def build_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> _EncoderBase:
    return _BUILDERS[cfg.family](rng, cfg)


def encode(encoder: _EncoderBase, x) -> FeaturePyramid:
    """Functional alias for ``encoder.encode(x)``."""
    return encoder.encode(x)
