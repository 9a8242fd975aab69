"""Reading and writing images, masks and soft labels.

Colour images load as ``[3, H, W]`` float32 in ``[0, 1]``; grayscale images as
``[H, W]`` scaled to ``[0, 1]``.  Files ending in ``.tsr`` are TSR1 tensors.
Binary masks are written as 8-bit ``{0, 255}`` PNG or PGM (chosen by suffix).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import F32, load_tensor, save_tensor


def _is_tensor(path) -> bool:
    return Path(path).suffix.lower() == ".tsr"


def read_rgb(path) -> np.ndarray:
    if _is_tensor(path):
        x = load_tensor(path)
        if x.ndim != 3 or x.shape[0] != 3:
            raise ValueError(f"{path}: expected a [3,H,W] tensor, got shape {x.shape}")
        return x
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1).astype(F32)


def read_gray(path) -> np.ndarray:
    if _is_tensor(path):
        x = load_tensor(path)
        if x.ndim == 3 and x.shape[0] == 1:
            x = x[0]
        if x.ndim != 2:
            raise ValueError(f"{path}: expected an [H,W] tensor, got shape {x.shape}")
        return x
    with Image.open(path) as im:
        return (np.asarray(im.convert("L"), dtype=np.float64) / 255.0).astype(F32)


def read_features(path) -> np.ndarray:
    x = load_tensor(path)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"{path}: expected a [C,H,W] tensor, got shape {x.shape}")
    return x


def write_rgb(path, image) -> None:
    arr = np.clip(np.rint(np.asarray(image, np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def write_mask(path, mask) -> None:
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def write_soft(path, label) -> None:
    """Soft labels keep full precision as TSR1; other suffixes get an 8-bit image."""
    if _is_tensor(path):
        save_tensor(path, label)
        return
    arr = np.clip(np.rint(np.asarray(label, np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
