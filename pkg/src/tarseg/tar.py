"""Text adaptive refinement (TAR) of soft instance labels.

One refinement step replaces every pixel of a soft label with a convex
combination of its window neighbours::

    p_new[x] = sum_a softmax_a(kbar(V_x, V_a)) * p[a]

    kbar(V_x, V_a) = mean_c( -|V_x[c] - V_a[c]| / sigma_x[c]**2 )

where ``V`` is the guidance map (backbone features in stage one, RGB in stage
two) and ``sigma_x[c]`` is the standard deviation of channel ``c`` over the
full ``(2r+1)**2`` footprint centred on ``x`` (clipped at the border, centre
included), floored at ``sigma_floor``.  The neighbour set ``a`` is the same
footprint without the centre pixel unless ``include_center`` is set.  Windows
are clipped at the image border and the softmax runs over in-image neighbours
only.  A pixel with no neighbour at all (a 1x1 image) keeps its value.

The guidance does not change between iterations, so the per-pixel neighbour
weights are computed once per stage and every iteration is a cheap weighted
sum of shifted copies of the previous label (double-buffered, reads only the
previous iterate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import F32, F64, ShapeError


@dataclass(frozen=True)
class RefineConfig:
    kernel_radius: int = 1
    iters_stage1: int = 2
    iters_stage2: int = 8
    sigma_floor: float = 1e-4
    include_center: bool = False
    binarize_threshold: float = 0.5
    sigma_mode: str = "window"  # or "global": one sigma per channel over the whole image

    def validate(self) -> "RefineConfig":
        if self.kernel_radius < 1:
            raise ValueError(f"kernel_radius must be >= 1, got {self.kernel_radius}")
        if self.iters_stage1 < 0 or self.iters_stage2 < 0:
            raise ValueError("iteration counts must be >= 0")
        if not self.sigma_floor > 0:
            raise ValueError(f"sigma_floor must be > 0, got {self.sigma_floor}")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError(f"binarize_threshold must lie in (0, 1), got {self.binarize_threshold}")
        if self.sigma_mode not in ("window", "global"):
            raise ValueError(f"sigma_mode must be 'window' or 'global', got {self.sigma_mode!r}")
        return self


def window_offsets(radius: int, include_center: bool) -> list[tuple[int, int]]:
    return [(dy, dx)
            for dy in range(-radius, radius + 1)
            for dx in range(-radius, radius + 1)
            if include_center or (dy, dx) != (0, 0)]


def _padded(arr: np.ndarray, r: int, fill=0.0) -> np.ndarray:
    pad = [(0, 0)] * (arr.ndim - 2) + [(r, r), (r, r)]
    return np.pad(arr, pad, constant_values=fill)


def _view(padded: np.ndarray, dy: int, dx: int, r: int, shape) -> np.ndarray:
    """Window of a padded array: ``out[..., y, x] = arr[..., y+dy, x+dx]``."""
    h, w = shape
    return padded[..., r + dy:r + dy + h, r + dx:r + dx + w]


def _as_guidance(guidance) -> np.ndarray:
    g = np.asarray(guidance)
    if g.ndim == 2:
        g = g[None]
    if g.ndim != 3:
        raise ShapeError(f"guidance must be [C,H,W] or [H,W], got shape {g.shape}")
    return g


def _box_sum(arr: np.ndarray, r: int) -> np.ndarray:
    """Sum over the clipped ``(2r+1)**2`` window, separably along rows then columns."""
    h, w = arr.shape[-2:]
    p = _padded(arr, r)
    rows = p[..., 0:h, :].copy()
    for d in range(1, 2 * r + 1):
        rows += p[..., d:d + h, :]
    out = rows[..., 0:w].copy()
    for d in range(1, 2 * r + 1):
        out += rows[..., d:d + w]
    return out


def local_sigma(guidance, radius: int, floor: float, mode: str = "window") -> np.ndarray:
    """Per-pixel, per-channel standard deviation of the guidance, floored."""
    g = _as_guidance(guidance).astype(F64)
    if mode == "global":
        sd = g.reshape(g.shape[0], -1).std(axis=1)
        return np.maximum(np.broadcast_to(sd[:, None, None], g.shape), floor)
    inv_count = 1.0 / _box_sum(np.ones(g.shape[1:], dtype=F64), radius)
    mean = _box_sum(g, radius) * inv_count
    var = _box_sum(g * g, radius) * inv_count - mean * mean
    return np.maximum(np.sqrt(np.maximum(var, 0.0)), floor)


def kernel_affinity(vx, vy, sigma) -> float:
    """Channel-mean of ``-|vx - vy| / sigma**2`` for two guidance vectors."""
    vx = np.atleast_1d(np.asarray(vx, F64))
    vy = np.atleast_1d(np.asarray(vy, F64))
    sigma = np.atleast_1d(np.asarray(sigma, F64))
    return float(np.mean(-np.abs(vx - vy) / sigma ** 2))


@dataclass
class Affinity:
    """Neighbour weights for one guidance map: ``weights[o]`` pairs with ``offsets[o]``."""

    offsets: list[tuple[int, int]]
    weights: np.ndarray  # [n_offsets, H, W], zero where the neighbour is outside the image
    isolated: np.ndarray  # [H, W] bool, pixels without any neighbour
    radius: int


def compute_affinity(guidance, cfg: RefineConfig) -> Affinity:
    g = _as_guidance(guidance).astype(F64)
    r = cfg.kernel_radius
    shape = g.shape[1:]
    inv_sigma2 = 1.0 / local_sigma(g, r, cfg.sigma_floor, cfg.sigma_mode) ** 2
    offs = window_offsets(r, cfg.include_center)
    gp = _padded(g, r)
    vp = _padded(np.ones(shape, dtype=bool), r, fill=False)
    logits = np.empty((len(offs),) + shape, dtype=F64)
    valid = np.empty(logits.shape, dtype=bool)
    scale = 1.0 / g.shape[0]
    for o, (dy, dx) in enumerate(offs):
        valid[o] = _view(vp, dy, dx, r, shape)
        diff = np.abs(g - _view(gp, dy, dx, r, shape))
        logits[o] = np.einsum("chw,chw->hw", diff, inv_sigma2) * -scale
    logits[~valid] = -np.inf
    peak = logits.max(axis=0)
    isolated = ~np.isfinite(peak)
    peak[isolated] = 0.0
    z = np.exp(logits - peak)
    denom = z.sum(axis=0)
    denom[isolated] = 1.0
    return Affinity(offs, z / denom, isolated, r)


def apply_affinity(label, aff: Affinity) -> np.ndarray:
    p = np.asarray(label)
    shape = aff.weights.shape[1:]
    if p.shape != shape:
        raise ShapeError(f"label shape {p.shape} does not match guidance shape {shape}")
    pf = p.astype(F64)
    pp = _padded(pf, aff.radius)
    out = np.zeros_like(pf)
    for w, (dy, dx) in zip(aff.weights, aff.offsets):
        out += w * _view(pp, dy, dx, aff.radius, shape)
    if aff.isolated.any():
        out[aff.isolated] = pf[aff.isolated]
    return out.astype(F32)


def _check_pair(label, guidance):
    p = np.asarray(label)
    g = _as_guidance(guidance)
    if p.ndim != 2:
        raise ShapeError(f"soft label must be [H,W], got shape {p.shape}")
    if g.shape[1:] != p.shape:
        raise ShapeError(f"guidance spatial shape {g.shape[1:]} does not match label shape {p.shape}")
    return p, g


def tar_step(label, guidance, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    p, g = _check_pair(label, guidance)
    return apply_affinity(p, compute_affinity(g, cfg))


def refine(label, guidance, iters: int, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """Apply :func:`tar_step` ``iters`` times.

    ``guidance`` may also be a precomputed :class:`Affinity`, which lets several
    instances that share one guidance map reuse the neighbour weights.
    """
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    if isinstance(guidance, Affinity):
        p = np.asarray(label)
        if p.shape != guidance.weights.shape[1:]:
            raise ShapeError(f"label shape {p.shape} does not match guidance shape {guidance.weights.shape[1:]}")
        aff = guidance
    else:
        p, g = _check_pair(label, guidance)
        aff = None
    p = p.astype(F32)
    if iters == 0:
        return p.copy()
    if aff is None:
        aff = compute_affinity(g, cfg)
    for _ in range(iters):
        p = apply_affinity(p, aff)
    return p


def two_stage_refine(seed, backbone_feat, rgb, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """Feature-guided refinement followed by RGB-guided refinement.

    ``backbone_feat`` must already be resized to the seed's resolution.
    """
    seed = np.asarray(seed)
    feat = _as_guidance(backbone_feat)
    rgb = _as_guidance(rgb)
    if feat.shape[1:] != seed.shape or rgb.shape[1:] != seed.shape:
        raise ShapeError(
            f"resolution mismatch: seed {seed.shape}, features {feat.shape[1:]}, rgb {rgb.shape[1:]}")
    stage1 = refine(seed, feat, cfg.iters_stage1, cfg)
    return refine(stage1, rgb, cfg.iters_stage2, cfg)


def normalize(label) -> np.ndarray:
    """Min-max normalise to [0, 1]; a constant map is returned unchanged."""
    p = np.asarray(label, F64)
    lo, hi = p.min(), p.max()
    if hi <= lo:
        return p.copy()
    return (p - lo) / (hi - lo)


def binarize(label, threshold: float = 0.5) -> np.ndarray:
    """Normalise then threshold (``>=``).  A constant map binarises to all zeros."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    p = np.asarray(label, F64)
    if p.max() <= p.min():
        return np.zeros(p.shape, dtype=np.uint8)
    return (normalize(p) >= threshold).astype(np.uint8)


# --------------------------------------------------------------------------
# Comparator: simplified dense mean-field (not the cited FC-CRF implementation)
# --------------------------------------------------------------------------

class AreaTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class MeanFieldConfig:
    """Dense Gaussian-CRF smoothing with an appearance kernel over (y, x, r, g, b).

    Each iteration solves the quadratic mean-field update exactly::

        q[i] = (u * q0[i] + sum_{j != i} k_ij q[j]) / (u + sum_{j != i} k_ij)
        k_ij = exp(-|pos_i - pos_j|^2 / (2 pos_sigma^2) - |rgb_i - rgb_j|^2 / (2 rgb_sigma^2))

    This is a simplified comparator, not the cited FC-CRF implementation: the
    full kernel is evaluated naively, O(N^2) per iteration.
    """

    pos_sigma: float = 6.0
    rgb_sigma: float = 0.1
    unary_weight: float = 1.0
    max_pixels: int = 16384
    block: int = 512


def baseline_meanfield(label, rgb, iters: int, cfg: MeanFieldConfig = MeanFieldConfig()) -> np.ndarray:
    q0 = np.asarray(label, F64)
    rgb = _as_guidance(rgb).astype(F64)
    if rgb.shape[1:] != q0.shape:
        raise ShapeError(f"rgb spatial shape {rgb.shape[1:]} does not match label shape {q0.shape}")
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    h, w = q0.shape
    n = h * w
    if n > cfg.max_pixels:
        raise AreaTooLarge(
            f"dense mean-field needs O(N^2) work; {h}x{w} = {n} pixels exceeds the cap of "
            f"{cfg.max_pixels}. Crop the image or raise max_pixels.")
    if iters == 0:
        return np.asarray(label, F32).copy()
    yy, xx = np.mgrid[0:h, 0:w].astype(F64)
    feats = np.concatenate([
        np.stack([yy.ravel(), xx.ravel()], axis=1) / cfg.pos_sigma,
        rgb.reshape(rgb.shape[0], -1).T / cfg.rgb_sigma,
    ], axis=1)
    sq = (feats ** 2).sum(axis=1)
    q_init = q0.ravel()
    q = q_init.copy()
    for _ in range(iters):
        num = np.empty(n)
        den = np.empty(n)
        for s in range(0, n, cfg.block):
            e = min(s + cfg.block, n)
            d2 = sq[s:e, None] + sq[None, :] - 2.0 * feats[s:e] @ feats.T
            k = np.exp(-0.5 * np.maximum(d2, 0.0))
            k[np.arange(e - s), np.arange(s, e)] = 0.0
            num[s:e] = k @ q
            den[s:e] = k.sum(axis=1)
        total = cfg.unary_weight + den
        safe = total > 0
        q = np.where(safe, (cfg.unary_weight * q_init + num) / np.where(safe, total, 1.0), q)
    return q.reshape(h, w).astype(F32)
