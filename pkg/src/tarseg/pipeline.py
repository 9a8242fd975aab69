"""End-to-end inference: pyramid, recognition, coarse masks, TAR pseudo labels, ensemble.

Level 1 is decoded greedily.  Levels 2 and 3 are decoded with the level-1
symbols forced as previous-symbol inputs so step ``t`` refers to the same
instance on every level.  Each instance then gets

* a coarse two-channel mask per level from the segmentation head,
* a TAR pseudo label per level, seeded by that level's attention map,
* a final binary mask: the vote over the three level masks,
* a binary pseudo mask: the vote over the three binarised pseudo labels.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .glyphs import SYMBOLS
from .pyramid import check_input_size, extract_pyramid, fuse
from .recognizer import END, AttentionTrace, attention_entropy, decode
from .seghead import coarse_mask, combine, ensemble, seg_loss
from .tar import RefineConfig, binarize, compute_affinity, normalize, refine
from .tensor import F32, resize_bilinear
from .weights import ModelWeights

N_LEVELS = 3
_SAFE = re.compile(r"^[A-Za-z0-9]+$")


def symbol_name(symbol: int, table=SYMBOLS) -> str:
    return table[symbol] if 0 <= symbol < len(table) else f"#{symbol}"


def file_tag(symbol: int, table=SYMBOLS) -> str:
    """Filesystem-safe tag for a symbol: the character itself or ``id<n>``."""
    name = symbol_name(symbol, table)
    return name if _SAFE.match(name) else f"id{symbol}"


@dataclass
class InstanceResult:
    index: int
    symbol: int
    mask: np.ndarray  # [H, W] uint8 {0, 1}
    pseudo: np.ndarray  # [H, W] uint8 {0, 1}
    level_masks: list = field(default_factory=list)  # CoarseMask per level
    level_pseudo: list = field(default_factory=list)  # soft [H, W] per level
    seg_loss: list = field(default_factory=list)  # per level


@dataclass
class PipelineResult:
    image_shape: tuple[int, int]
    traces: list  # AttentionTrace per level
    instances: list[InstanceResult]

    @property
    def symbols(self) -> list[int]:
        return [inst.symbol for inst in self.instances]

    def summary(self, table=SYMBOLS) -> dict:
        levels = []
        for l, trace in enumerate(self.traces):
            levels.append({
                "level": l + 1,
                "attention_shape": list(trace.steps[0].attention.shape) if trace.steps else [],
                "steps": [{"t": t, "symbol": s.symbol, "char": symbol_name(s.symbol, table),
                           "attention_entropy": attention_entropy(s.attention)}
                          for t, s in enumerate(trace.steps)],
            })
        return {
            "input_size": list(self.image_shape),
            "symbols": self.symbols,
            "chars": [symbol_name(s, table) for s in self.symbols],
            "ended": bool(self.traces[0].steps and self.traces[0].steps[-1].symbol == END),
            "levels": levels,
            "instances": [{
                "index": inst.index,
                "symbol": inst.symbol,
                "char": symbol_name(inst.symbol, table),
                "mask_area": int(inst.mask.sum()),
                "pseudo_area": int(inst.pseudo.sum()),
                "seg_loss": inst.seg_loss,
            } for inst in self.instances],
        }


def _skips(fused_top, shape):
    """Skip features for the three decoder stages of a level with spatial ``shape``."""
    h, w = shape
    return [resize_bilinear(fused_top, h * 2 ** (s + 1), w * 2 ** (s + 1)) for s in range(3)]


def run_pipeline(image, weights: ModelWeights, max_steps: int = 8, refine_cfg: RefineConfig = RefineConfig(),
                 ensemble_mode: str = "vote", threads: int = 1) -> PipelineResult:
    image = np.asarray(image, F32)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"image must be [3,H,W], got shape {image.shape}")
    refine_cfg.validate()
    h, w = image.shape[1:]
    check_input_size(h, w)
    pyr = fuse(extract_pyramid(image, weights.backbone), weights.fusion)
    rec = weights.recognizer

    first = decode(pyr.fused[0], rec, max_steps)
    steps = first.instances()
    symbols = [s.symbol for s in steps]
    traces = [first]
    for l in range(1, N_LEVELS):
        traces.append(decode(pyr.fused[l], rec, 1, forced=symbols) if symbols else AttentionTrace())

    # guidance weights are shared by every instance
    thr = refine_cfg.binarize_threshold
    feat_aff = [None] * N_LEVELS
    if refine_cfg.iters_stage1:
        feat_aff = [compute_affinity(resize_bilinear(pyr.fused[l], h, w), refine_cfg) for l in range(N_LEVELS)]
    rgb_aff = compute_affinity(image, refine_cfg) if refine_cfg.iters_stage2 else None
    skips = [_skips(pyr.fused[0], pyr.fused[l].shape[1:]) for l in range(N_LEVELS)]

    def one(t):
        symbol = symbols[t]
        emb = rec.embed[symbol]
        masks, pseudo_soft, losses = [], [], []
        for l in range(N_LEVELS):
            att = traces[l].steps[t].attention
            fc = combine(pyr.fused[l], att, emb, weights.seghead)
            m = coarse_mask(fc, skips[l], weights.seghead, instance_id=t)
            seed = normalize(resize_bilinear(att, h, w)).astype(F32)
            p = refine(seed, feat_aff[l], refine_cfg.iters_stage1, refine_cfg) if feat_aff[l] is not None else seed
            p = refine(p, rgb_aff, refine_cfg.iters_stage2, refine_cfg) if rgb_aff is not None else p
            target = resize_bilinear(binarize(p, thr).astype(F32), *m.fg.shape) >= 0.5
            losses.append(seg_loss([m], [target.astype(F32)]))
            masks.append(m)
            pseudo_soft.append(p)
        final = ensemble(*masks, h, w, mode=ensemble_mode)
        pseudo = ensemble(*[binarize(p, thr) for p in pseudo_soft], h, w, mode="vote")
        return InstanceResult(t, symbol, final, pseudo, masks, pseudo_soft, losses)

    if threads > 1 and len(symbols) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            instances = list(pool.map(one, range(len(symbols))))
    else:
        instances = [one(t) for t in range(len(symbols))]
    return PipelineResult((h, w), traces, instances)
