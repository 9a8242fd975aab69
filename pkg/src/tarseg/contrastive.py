"""Mask-augmented contrastive objective, total loss and analytic gradients.

For a batch of ``(image projection, masked-image projection)`` pairs the loss is

    L_c = sum_i nce(P_i, Pp_i, neg_i) + sum_i nce(Pp_i, P_i, neg_i)
    nce(a, b, N) = -log( exp(sim(a, b)/tau) / sum_{n in N} exp(sim(a, n)/tau) )

where ``neg_i`` holds the raw image projections of every other item.  The
denominator runs over negatives only, so a single term may be negative;
``include_positive=True`` adds the positive to the denominator (the usual
InfoNCE form).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pyramid import BackboneWeights, backbone_stages
from .rng import make_rng
from .tensor import F32, F64, ShapeError

DEFAULT_TAU = 0.1
LAMBDA_REC = 1.0
LAMBDA_C = 0.1


class DegenerateInput(ValueError):
    """Zero-norm projection or too few items to form negatives."""


@dataclass
class ProjectionWeights:
    weight: np.ndarray  # [Dp, C]
    bias: np.ndarray  # [Dp]

    @classmethod
    def random(cls, channels: int, dim: int = 16, seed: int = 0, zero_bias: bool = False):
        rng = make_rng(seed, "projection")
        w = (rng.standard_normal((dim, channels)) / np.sqrt(channels)).astype(F32)
        b = np.zeros(dim, F32) if zero_bias else rng.uniform(-0.1, 0.1, dim).astype(F32)
        return cls(w, b)

    def to_dict(self):
        return {"proj.weight": self.weight, "proj.bias": self.bias}

    @classmethod
    def from_dict(cls, d):
        from .weights import require

        return cls(require(d, "proj.weight"), require(d, "proj.bias"))


def project(image, backbone: BackboneWeights, proj: ProjectionWeights) -> np.ndarray:
    """Top backbone level, global average pool, one linear layer."""
    top = backbone_stages(image, backbone)[-1]
    if top.shape[0] != proj.weight.shape[1]:
        raise ShapeError(f"projection expects {proj.weight.shape[1]} channels, backbone gives {top.shape[0]}")
    pooled = top.astype(F64).mean(axis=(1, 2))
    return (proj.weight.astype(F64) @ pooled + proj.bias.astype(F64)).astype(F32)


def masked_image(image, mask) -> np.ndarray:
    """The positive view: the image with non-text pixels zeroed."""
    return (np.asarray(image, F32) * np.asarray(mask, F32)[None]).astype(F32)


def _norm(v) -> float:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise DegenerateInput("cosine similarity is undefined for a zero vector")
    return n


def cosine_sim(a, b) -> float:
    a = np.asarray(a, F64).ravel()
    b = np.asarray(b, F64).ravel()
    return float(a @ b / (_norm(a) * _norm(b)))


def _logsumexp(x) -> float:
    x = np.asarray(x, F64)
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def l_nce(pi, pp, negatives, tau: float = DEFAULT_TAU, include_positive: bool = False) -> float:
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    negatives = list(negatives)
    if not negatives:
        raise DegenerateInput("l_nce needs at least one negative")
    pos = cosine_sim(pi, pp) / tau
    scores = [cosine_sim(pi, n) / tau for n in negatives]
    if include_positive:
        scores.append(pos)
    return -pos + _logsumexp(scores)


def _as_batch(batch):
    items = [(np.asarray(a, F64), np.asarray(b, F64)) for a, b in batch]
    if len(items) < 2:
        raise DegenerateInput(f"contrastive loss needs at least 2 items, got {len(items)}")
    return items


def contrastive_loss(batch, tau: float = DEFAULT_TAU, include_positive: bool = False) -> float:
    items = _as_batch(batch)
    total = 0.0
    for i, (pi, pp) in enumerate(items):
        neg = [items[j][0] for j in range(len(items)) if j != i]
        total += l_nce(pi, pp, neg, tau, include_positive)
        total += l_nce(pp, pi, neg, tau, include_positive)
    return total


def total_loss(l_seg: float, l_rec: float, l_c: float,
               lambda_rec: float = LAMBDA_REC, lambda_c: float = LAMBDA_C) -> float:
    if lambda_rec < 0 or lambda_c < 0:
        raise ValueError("loss weights must be >= 0")
    return l_seg + lambda_rec * l_rec + lambda_c * l_c


def _sim_grads(a, b):
    """Gradients of cos(a, b) with respect to a and b."""
    na, nb = _norm(a), _norm(b)
    s = a @ b / (na * nb)
    return b / (na * nb) - s * a / na ** 2, a / (na * nb) - s * b / nb ** 2, s


def contrastive_grad(batch, tau: float = DEFAULT_TAU, include_positive: bool = False):
    """Analytic gradient of :func:`contrastive_loss`.

    Returns ``(grad_images, grad_masked)``, each a ``[B, Dp]`` float64 array.
    """
    items = _as_batch(batch)
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    b = len(items)
    g_img = np.zeros((b, items[0][0].size), F64)
    g_msk = np.zeros_like(g_img)
    for i in range(b):
        neg_idx = [j for j in range(b) if j != i]
        # (anchor, positive) roles for the two terms of item i; 0 = image, 1 = masked
        for anchor_role in (0, 1):
            anchor = items[i][anchor_role]
            positive = items[i][1 - anchor_role]
            g_anchor = g_img[i] if anchor_role == 0 else g_msk[i]
            g_pos = g_msk[i] if anchor_role == 0 else g_img[i]
            da_pos, dp_pos, s_pos = _sim_grads(anchor, positive)
            neg_terms = [_sim_grads(anchor, items[j][0]) for j in neg_idx]
            scores = [s / tau for _, _, s in neg_terms]
            if include_positive:
                scores.append(s_pos / tau)
            scores = np.asarray(scores)
            weights = np.exp(scores - scores.max())
            weights /= weights.sum()
            coef_pos = -1.0 / tau + (weights[-1] / tau if include_positive else 0.0)
            g_anchor += coef_pos * da_pos
            g_pos += coef_pos * dp_pos
            for k, j in enumerate(neg_idx):
                da_n, dn, _ = neg_terms[k]
                g_anchor += (weights[k] / tau) * da_n
                g_img[j] += (weights[k] / tau) * dn
    return g_img, g_msk


def finite_difference_grad(batch, tau: float = DEFAULT_TAU, include_positive: bool = False, h: float = 1e-5):
    """Central finite differences of :func:`contrastive_loss`, float64 throughout."""
    items = [(np.array(a, F64), np.array(b, F64)) for a, b in batch]
    g = [np.zeros((len(items), items[0][0].size), F64) for _ in range(2)]
    for i in range(len(items)):
        for role in (0, 1):
            vec = items[i][role]
            for k in range(vec.size):
                orig = vec[k]
                vec[k] = orig + h
                up = contrastive_loss(items, tau, include_positive)
                vec[k] = orig - h
                down = contrastive_loss(items, tau, include_positive)
                vec[k] = orig
                g[role][i, k] = (up - down) / (2.0 * h)
    return g[0], g[1]


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, F64)
    n = np.asarray(numeric, F64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def gradcheck(n_batches: int = 50, seed: int = 0, tau: float = DEFAULT_TAU,
              include_positive: bool = False) -> dict:
    """Compare analytic and finite-difference gradients on random batches (sizes 2-8, Dp 4-16)."""
    worst = 0.0
    results = []
    for k in range(n_batches):
        rng = make_rng(seed, "gradcheck", k)
        size = int(rng.integers(2, 9))
        dim = int(rng.integers(4, 17))
        batch = [(rng.standard_normal(dim), rng.standard_normal(dim)) for _ in range(size)]
        ga, gm = contrastive_grad(batch, tau, include_positive)
        na, nm = finite_difference_grad(batch, tau, include_positive)
        err = max(max_relative_error(ga, na), max_relative_error(gm, nm))
        worst = max(worst, err)
        results.append({"batch": k, "size": size, "dim": dim, "max_rel_err": err})
    return {"batches": n_batches, "tau": tau, "max_rel_err": worst, "per_batch": results}
