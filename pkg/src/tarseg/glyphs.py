"""Built-in vector stroke alphabet.

Each glyph is a list of polylines in unit coordinates ``(u, v)`` with ``u``
to the right and ``v`` downward, both in ``[0, 1]``.  Ring glyphs also carry
an analytic interior predicate used to measure hole leakage.
"""

from __future__ import annotations

import numpy as np


def arc(cx, cy, rx, ry, a0, a1, n=32):
    t = np.deg2rad(np.linspace(a0, a1, n))
    return list(zip(cx + rx * np.cos(t), cy + ry * np.sin(t)))


STROKES: dict[str, list[list[tuple[float, float]]]] = {
    "A": [[(0.05, 1), (0.5, 0), (0.95, 1)], [(0.25, 0.6), (0.75, 0.6)]],
    "C": [arc(0.55, 0.5, 0.45, 0.5, 45, 315)],
    "D": [[(0.1, 0), (0.1, 1)], arc(0.1, 0.5, 0.8, 0.5, -90, 90)],
    "E": [[(0.85, 0), (0.15, 0), (0.15, 1), (0.85, 1)], [(0.15, 0.5), (0.7, 0.5)]],
    "F": [[(0.85, 0), (0.15, 0), (0.15, 1)], [(0.15, 0.5), (0.7, 0.5)]],
    "H": [[(0.15, 0), (0.15, 1)], [(0.85, 0), (0.85, 1)], [(0.15, 0.5), (0.85, 0.5)]],
    "I": [[(0.5, 0), (0.5, 1)]],
    "K": [[(0.15, 0), (0.15, 1)], [(0.85, 0), (0.15, 0.6)], [(0.4, 0.4), (0.85, 1)]],
    "L": [[(0.15, 0), (0.15, 1), (0.85, 1)]],
    "M": [[(0.1, 1), (0.1, 0), (0.5, 0.6), (0.9, 0), (0.9, 1)]],
    "N": [[(0.15, 1), (0.15, 0), (0.85, 1), (0.85, 0)]],
    "O": [arc(0.5, 0.5, 0.45, 0.5, 0, 360, n=48)],
    "T": [[(0.05, 0), (0.95, 0)], [(0.5, 0), (0.5, 1)]],
    "U": [[(0.15, 0), (0.15, 0.7)] + arc(0.5, 0.7, 0.35, 0.3, 180, 0)[1:] + [(0.85, 0)]],
    "V": [[(0.05, 0), (0.5, 1), (0.95, 0)]],
    "X": [[(0.1, 0), (0.9, 1)], [(0.9, 0), (0.1, 1)]],
    "Y": [[(0.05, 0), (0.5, 0.5), (0.95, 0)], [(0.5, 0.5), (0.5, 1)]],
    "Z": [[(0.1, 0), (0.9, 0), (0.1, 1), (0.9, 1)]],
    "1": [[(0.25, 0.2), (0.55, 0), (0.55, 1)]],
    "7": [[(0.1, 0), (0.9, 0), (0.4, 1)]],
}

RING_GLYPHS = ("C", "O", "D")


def _in_ellipse(u, v, cx, cy, rx, ry):
    return ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2 < 1.0


INTERIORS = {
    "O": lambda u, v: _in_ellipse(u, v, 0.5, 0.5, 0.45, 0.5),
    "C": lambda u, v: _in_ellipse(u, v, 0.55, 0.5, 0.45, 0.5),
    "D": lambda u, v: (u > 0.1) & _in_ellipse(u, v, 0.1, 0.5, 0.8, 0.5),
}

ALPHABET = "".join(sorted(STROKES))
SPECIAL = ["<s>", "</s>", "<pad>"]
SYMBOLS = SPECIAL + list(ALPHABET)


def symbol_id(ch: str) -> int:
    return SYMBOLS.index(ch)


def _segment_distance(py, px, a, b):
    (ax, ay), (bx, by) = a, b
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    if denom == 0:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / denom, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _unit_to_px(u, v, box, pad):
    y0, x0, gh, gw = box
    return x0 + pad + u * (gw - 2 * pad), y0 + pad + v * (gh - 2 * pad)


def render(ch: str, shape, box, thickness: float) -> np.ndarray:
    """Binary ink mask of glyph ``ch`` drawn inside ``box = (y0, x0, h, w)``."""
    h, w = shape
    y0, x0, gh, gw = box
    pad = thickness / 2.0 + 0.5
    mask = np.zeros((h, w), dtype=bool)
    ys, xs = np.mgrid[y0:y0 + gh, x0:x0 + gw].astype(np.float64) + 0.5
    dist = np.full(ys.shape, np.inf)
    for line in STROKES[ch]:
        pts = [_unit_to_px(u, v, box, pad) for u, v in line]
        for a, b in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(ys, xs, a, b))
    mask[y0:y0 + gh, x0:x0 + gw] = dist <= thickness / 2.0
    return mask


def interior(ch: str, shape, box, thickness: float, ink: np.ndarray) -> np.ndarray:
    """Non-ink pixels enclosed by a ring glyph (empty for other glyphs)."""
    h, w = shape
    out = np.zeros((h, w), dtype=bool)
    test = INTERIORS.get(ch)
    if test is None:
        return out
    y0, x0, gh, gw = box
    pad = thickness / 2.0 + 0.5
    ys, xs = np.mgrid[y0:y0 + gh, x0:x0 + gw].astype(np.float64) + 0.5
    u = (xs - x0 - pad) / (gw - 2 * pad)
    v = (ys - y0 - pad) / (gh - 2 * pad)
    out[y0:y0 + gh, x0:x0 + gw] = test(u, v)
    return out & ~ink
