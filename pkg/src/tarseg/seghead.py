"""Segmentation head: combined feature, coarse masks, BCE loss and level ensemble."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import make_rng
from .tensor import F32, F64, ShapeError, conv2d, relu, resize_bilinear, sigmoid, transposed_conv2d

EPS = 1e-7
N_STAGES = 3
# float32 sigmoid rounds to exactly 0 or 1 once |logit| > ~17; keep scores strictly inside (0, 1)
_OPEN_LO = np.float32(np.finfo(np.float32).tiny)
_OPEN_HI = np.nextafter(np.float32(1.0), np.float32(0.0))


@dataclass
class SegHeadWeights:
    combine_w: np.ndarray  # [C, C + 1 + E, 1, 1]
    combine_b: np.ndarray  # [C]
    up_w: list[np.ndarray]  # per stage [C_in, S, 2, 2]
    up_b: list[np.ndarray]  # per stage [S]
    skip_w: list[np.ndarray]  # per stage [S, C_skip, 1, 1]
    skip_b: list[np.ndarray]  # per stage [S]
    out_w: np.ndarray  # [2, S, 1, 1]
    out_b: np.ndarray  # [2]

    @classmethod
    def random(cls, channels: int, embed: int, seg_channels: int = 16, skip_channels: int | None = None,
               seed: int = 0):
        rng = make_rng(seed, "seghead")
        skip_channels = channels if skip_channels is None else skip_channels
        n_in = channels + 1 + embed

        def init(shape, fan_in):
            return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(F32)

        up_w, up_b, skip_w, skip_b = [], [], [], []
        c_in = channels
        for _ in range(N_STAGES):
            up_w.append(init((c_in, seg_channels, 2, 2), c_in))
            up_b.append(rng.uniform(-0.1, 0.1, seg_channels).astype(F32))
            skip_w.append(init((seg_channels, skip_channels, 1, 1), skip_channels))
            skip_b.append(np.zeros(seg_channels, F32))
            c_in = seg_channels
        return cls(
            combine_w=init((channels, n_in, 1, 1), n_in),
            combine_b=np.zeros(channels, F32),
            up_w=up_w, up_b=up_b, skip_w=skip_w, skip_b=skip_b,
            out_w=init((2, seg_channels, 1, 1), seg_channels),
            out_b=np.zeros(2, F32),
        )

    def without_skips(self) -> "SegHeadWeights":
        return SegHeadWeights(
            self.combine_w, self.combine_b, self.up_w, self.up_b,
            [np.zeros_like(w) for w in self.skip_w], [np.zeros_like(b) for b in self.skip_b],
            self.out_w, self.out_b,
        )

    def to_dict(self) -> dict[str, np.ndarray]:
        out = {"seg.combine.weight": self.combine_w, "seg.combine.bias": self.combine_b,
               "seg.out.weight": self.out_w, "seg.out.bias": self.out_b}
        for s in range(N_STAGES):
            out[f"seg.up{s + 1}.weight"] = self.up_w[s]
            out[f"seg.up{s + 1}.bias"] = self.up_b[s]
            out[f"seg.skip{s + 1}.weight"] = self.skip_w[s]
            out[f"seg.skip{s + 1}.bias"] = self.skip_b[s]
        return out

    @classmethod
    def from_dict(cls, d) -> "SegHeadWeights":
        from .weights import require

        stages = range(1, N_STAGES + 1)
        return cls(
            combine_w=require(d, "seg.combine.weight"),
            combine_b=require(d, "seg.combine.bias"),
            up_w=[require(d, f"seg.up{s}.weight") for s in stages],
            up_b=[require(d, f"seg.up{s}.bias") for s in stages],
            skip_w=[require(d, f"seg.skip{s}.weight") for s in stages],
            skip_b=[require(d, f"seg.skip{s}.bias") for s in stages],
            out_w=require(d, "seg.out.weight"),
            out_b=require(d, "seg.out.bias"),
        )


@dataclass
class CoarseMask:
    channels: np.ndarray  # [2, H, W]: foreground, background
    instance_id: int = 0

    @property
    def fg(self) -> np.ndarray:
        return self.channels[0]

    @property
    def bg(self) -> np.ndarray:
        return self.channels[1]


def combine(fused, attention, symbol_embedding, weights: SegHeadWeights) -> np.ndarray:
    """1x1 projection of ``[fused || attention || broadcast embedding]`` to C channels."""
    fused = np.asarray(fused)
    attention = np.asarray(attention)
    emb = np.asarray(symbol_embedding).reshape(-1)
    if fused.ndim != 3:
        raise ShapeError(f"fused features must be [C,H,W], got shape {fused.shape}")
    c, h, w = fused.shape
    if attention.shape != (h, w):
        raise ShapeError(f"attention map shape {attention.shape} does not match features {(h, w)}")
    expected = c + 1 + emb.size
    if weights.combine_w.shape[1] != expected:
        raise ShapeError(f"combine weight takes {weights.combine_w.shape[1]} channels, input has {expected}")
    stacked = np.concatenate([
        fused.astype(F32),
        attention.astype(F32)[None],
        np.broadcast_to(emb.astype(F32)[:, None, None], (emb.size, h, w)),
    ], axis=0)
    return conv2d(stacked, weights.combine_w, weights.combine_b)


def coarse_mask(fc, skips, weights: SegHeadWeights, instance_id: int = 0) -> CoarseMask:
    """Three stride-2 up-sampling stages with projected skip additions, then a 2-channel sigmoid.

    ``skips[s]`` must match the spatial size after stage ``s`` (``2**(s+1)`` times
    the input); ``None`` skips a junction.  Output is ``[2, 8H, 8W]``.
    """
    x = np.asarray(fc)
    if x.ndim != 3:
        raise ShapeError(f"combined feature must be [C,H,W], got shape {x.shape}")
    skips = list(skips) if skips is not None else [None] * N_STAGES
    if len(skips) != N_STAGES:
        raise ShapeError(f"expected {N_STAGES} skip tensors, got {len(skips)}")
    for s in range(N_STAGES):
        x = transposed_conv2d(x, weights.up_w[s], weights.up_b[s], stride=2)
        skip = skips[s]
        if skip is not None:
            skip = np.asarray(skip)
            if skip.ndim != 3 or skip.shape[1:] != x.shape[1:]:
                raise ShapeError(f"skip {s + 1} has shape {skip.shape}, stage output is {x.shape}")
            x = (x.astype(F64) + conv2d(skip, weights.skip_w[s], weights.skip_b[s]).astype(F64)).astype(F32)
        x = relu(x)
    logits = conv2d(x, weights.out_w, weights.out_b)
    return CoarseMask(np.clip(sigmoid(logits), _OPEN_LO, _OPEN_HI), instance_id)


def _bce(m, p) -> float:
    m = np.clip(np.asarray(m, F64), EPS, 1.0 - EPS)
    p = np.asarray(p, F64)
    return float(np.mean(-(p * np.log(m) + (1.0 - p) * np.log(1.0 - m))))


def seg_loss(masks, pseudo) -> float:
    """Sum over instances of the pixel-mean BCE.

    ``masks`` items are either foreground maps or :class:`CoarseMask` objects.
    For a two-channel mask the background channel is scored against the
    complement of the pseudo label and the two channel losses are averaged.
    """
    masks = list(masks)
    pseudo = list(pseudo)
    if len(masks) != len(pseudo):
        raise ValueError(f"{len(masks)} masks but {len(pseudo)} pseudo labels")
    total = 0.0
    for m, p in zip(masks, pseudo):
        p = np.asarray(p, F64)
        if isinstance(m, CoarseMask):
            if m.fg.shape != p.shape:
                raise ShapeError(f"mask shape {m.fg.shape} does not match pseudo label shape {p.shape}")
            total += 0.5 * (_bce(m.fg, p) + _bce(m.bg, 1.0 - p))
        else:
            if np.shape(m) != p.shape:
                raise ShapeError(f"mask shape {np.shape(m)} does not match pseudo label shape {p.shape}")
            total += _bce(m, p)
    return total


def _fg(m) -> np.ndarray:
    return m.fg if isinstance(m, CoarseMask) else np.asarray(m)


def ensemble(m1, m2, m3, out_h: int, out_w: int, mode: str = "vote") -> np.ndarray:
    """Fuse the three level masks of one instance into a binary ``[out_h, out_w]`` map.

    ``vote``: threshold each foreground at 0.5, upsample the binary maps,
    re-threshold at 0.5 and keep pixels where at least two levels agree.
    ``mean``: upsample the foreground probabilities, average, threshold at 0.5.
    """
    levels = [_fg(m).astype(F64) for m in (m1, m2, m3)]
    if mode == "vote":
        votes = sum((resize_bilinear((lv >= 0.5).astype(F64), out_h, out_w) >= 0.5).astype(np.int32)
                    for lv in levels)
        return (votes >= 2).astype(np.uint8)
    if mode == "mean":
        avg = sum(resize_bilinear(lv, out_h, out_w) for lv in levels) / 3.0
        return (avg >= 0.5).astype(np.uint8)
    raise ValueError(f"unknown ensemble mode {mode!r}")
