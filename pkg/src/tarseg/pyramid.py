"""Three-level feature pyramid and adaptive level fusion.

The backbone is a fixed stack of three strided 3x3 convolutions:

* stage 1, stride 2      -> ``[C, H/2, W/2]``
* stage 2, stride 2      -> ``[C, H/4, W/4]``
* stage 3, stride (2, 1) -> ``[C, H/8, W/4]``

The top level halves only the height.  That asymmetric ``H/8 x W/4`` shape is
kept exactly as published even though it may be a misprint for ``W/8``.

Fusion mixes the three levels with one scalar per (target level, source level)::

    fused[l] = alpha[l] * resize(f1 -> l) + beta[l] * resize(f2 -> l) + gamma[l] * resize(f3 -> l)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng
from .tensor import F32, F64, ShapeError, conv2d, relu, resize_bilinear

STAGE_STRIDES = ((2, 2), (2, 2), (2, 1))


class ConfigError(ValueError):
    """Invalid configuration or input geometry."""


@dataclass
class BackboneWeights:
    weights: list[np.ndarray]  # three [C_out, C_in, 3, 3]
    biases: list[np.ndarray]

    @property
    def channels(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def random(cls, channels: int, in_channels: int = 3, seed: int = 0, zero_bias: bool = False):
        rng = make_rng(seed, "backbone")
        ws, bs = [], []
        c_in = in_channels
        for _ in STAGE_STRIDES:
            fan_in = c_in * 9
            ws.append((rng.standard_normal((channels, c_in, 3, 3)) * np.sqrt(2.0 / fan_in)).astype(F32))
            b = np.zeros(channels) if zero_bias else rng.uniform(-0.1, 0.1, channels)
            bs.append(b.astype(F32))
            c_in = channels
        return cls(ws, bs)

    def to_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for n, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            out[f"backbone.stage{n}.weight"] = w
            out[f"backbone.stage{n}.bias"] = b
        return out

    @classmethod
    def from_dict(cls, d) -> "BackboneWeights":
        from .weights import require

        ws = [require(d, f"backbone.stage{n}.weight") for n in (1, 2, 3)]
        bs = [require(d, f"backbone.stage{n}.bias") for n in (1, 2, 3)]
        return cls(ws, bs)


@dataclass
class FusionWeights:
    """Scalar mixing weights; row ``l`` holds (alpha, beta, gamma) for level ``l``."""

    table: np.ndarray = field(default_factory=lambda: np.eye(3, dtype=F32))

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=F32).reshape(3, 3)
        if not np.all(np.isfinite(self.table)):
            raise ConfigError("fusion weights must be finite")

    @classmethod
    def uniform(cls) -> "FusionWeights":
        return cls(np.full((3, 3), 1.0 / 3.0, dtype=F32))

    @classmethod
    def random(cls, seed: int = 0) -> "FusionWeights":
        rng = make_rng(seed, "fusion")
        return cls(rng.uniform(0.0, 1.0, (3, 3)).astype(F32))

    def __add__(self, other: "FusionWeights") -> "FusionWeights":
        return FusionWeights(self.table + other.table)

    def to_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for l in range(3):
            for k, name in enumerate(("alpha", "beta", "gamma")):
                out[f"fusion.l{l + 1}.{name}"] = self.table[l, k:k + 1].copy()
        return out

    @classmethod
    def from_dict(cls, d) -> "FusionWeights":
        from .weights import require

        table = np.zeros((3, 3), dtype=F32)
        for l in range(3):
            for k, name in enumerate(("alpha", "beta", "gamma")):
                table[l, k] = np.asarray(require(d, f"fusion.l{l + 1}.{name}")).reshape(-1)[0]
        return cls(table)


@dataclass
class FeaturePyramid:
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    fused: list[np.ndarray] | None = None

    @property
    def levels(self) -> list[np.ndarray]:
        return [self.f1, self.f2, self.f3]

    def level_shape(self, l: int) -> tuple[int, int]:
        return self.levels[l].shape[1:]


def check_input_size(h: int, w: int) -> None:
    if h % 8 or w % 4:
        raise ConfigError(f"input size {h}x{w} must have H divisible by 8 and W divisible by 4")


def backbone_stages(image, weights: BackboneWeights) -> list[np.ndarray]:
    image = np.asarray(image, dtype=F32)
    if image.ndim != 3:
        raise ShapeError(f"image must be [C,H,W], got shape {image.shape}")
    check_input_size(*image.shape[1:])
    if image.shape[0] != weights.in_channels:
        raise ShapeError(f"image has {image.shape[0]} channels, backbone expects {weights.in_channels}")
    x = image
    outs = []
    for w, b, stride in zip(weights.weights, weights.biases, STAGE_STRIDES):
        x = relu(conv2d(x, w, b, stride=stride, padding=1))
        outs.append(x)
    return outs


def extract_pyramid(image, weights: BackboneWeights) -> FeaturePyramid:
    f1, f2, f3 = backbone_stages(image, weights)
    return FeaturePyramid(f1, f2, f3)


def fuse_level(pyr: FeaturePyramid, w: FusionWeights, level: int) -> np.ndarray:
    h, wd = pyr.level_shape(level)
    acc = np.zeros(pyr.levels[level].shape, dtype=F64)
    for src, coef in zip(pyr.levels, w.table[level]):
        acc += float(coef) * resize_bilinear(src, h, wd).astype(F64)
    return acc.astype(F32)


def fuse(pyr: FeaturePyramid, w: FusionWeights, order=(0, 1, 2)) -> FeaturePyramid:
    """Fill ``pyr.fused``; ``order`` only changes evaluation order, never results."""
    fused: list = [None, None, None]
    for level in order:
        fused[level] = fuse_level(pyr, w, level)
    return FeaturePyramid(pyr.f1, pyr.f2, pyr.f3, fused)
