"""Dense array primitives shared by every stage of the pipeline.

Tensors are plain ``numpy.ndarray`` objects stored as float32 (float64 on the
gradient-check paths).  Reductions accumulate in float64 and cast back to the
input dtype on return.  All functions are pure: inputs are never modified.

Bilinear resizing uses the half-pixel (``align_corners=False``) convention:
output pixel ``j`` samples source coordinate ``(j + 0.5) * in / out - 0.5``,
clamped to ``[0, in - 1]``.

Interchange format (``TSR1``), all little-endian::

    b"TSR1" | u32 rank | u32 dim[rank] | f32 payload (row-major)

A named archive (``TSRA``) concatenates records::

    b"TSRA" | u32 count | count * (u32 name_len | utf-8 name | TSR1 record)
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Mapping, Sequence

import numpy as np

F32 = np.float32
F64 = np.float64

TENSOR_MAGIC = b"TSR1"
ARCHIVE_MAGIC = b"TSRA"


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


def as_tensor(x, dtype=F32) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    return arr


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ShapeError(f"expected an int or a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _check_axis(x: np.ndarray, axis: int) -> int:
    if axis < 0 or axis >= x.ndim:
        raise ShapeError(f"axis {axis} out of range for rank-{x.ndim} tensor")
    return axis


def _out_dtype(*arrays) -> np.dtype:
    return F64 if any(np.asarray(a).dtype == F64 for a in arrays) else F32


# --------------------------------------------------------------------------
# Convolutions
# --------------------------------------------------------------------------

def conv2d(x, weight, bias=None, stride=1, padding=0) -> np.ndarray:
    """Cross-correlation of a ``[C_in, H, W]`` map with ``[C_out, C_in, kH, kW]``.

    ``stride`` and ``padding`` take an int or an ``(h, w)`` pair.  Padding is
    zero-valued.
    """
    x = np.asarray(x)
    weight = np.asarray(weight)
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be [C,H,W], got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be [C_out,C_in,kH,kW], got shape {weight.shape}")
    c_in, h, w = x.shape
    c_out, wc_in, kh, kw = weight.shape
    if wc_in != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {c_in}, weight expects {wc_in}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ShapeError(f"stride must be >= 1, got {(sh, sw)}")
    if ph < 0 or pw < 0:
        raise ShapeError(f"padding must be >= 0, got {(ph, pw)}")
    hp, wp = h + 2 * ph, w + 2 * pw
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} does not fit padded input {hp}x{wp}")
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d bias must have shape ({c_out},), got {bias.shape}")
    out_dtype = _out_dtype(x, weight)
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1

    if kh == kw == 1 and (sh, sw) == (1, 1) and (ph, pw) == (0, 0):
        out = weight.reshape(c_out, c_in).astype(F64) @ x.reshape(c_in, h * w).astype(F64)
        if bias is not None:
            out += bias.astype(F64)[:, None]
        return out.reshape(c_out, h, w).astype(out_dtype)
    xp = np.pad(x.astype(F64), ((0, 0), (ph, ph), (pw, pw)))
    # im2col: [C_in, kH, kW, Ho, Wo]
    cols = np.empty((c_in, kh, kw, ho, wo), dtype=F64)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
    out = weight.reshape(c_out, -1).astype(F64) @ cols.reshape(c_in * kh * kw, ho * wo)
    if bias is not None:
        out += bias.astype(F64)[:, None]
    return out.reshape(c_out, ho, wo).astype(out_dtype)


def transposed_conv2d(x, weight, bias=None, stride=1) -> np.ndarray:
    """Transposed convolution (the adjoint of :func:`conv2d` without padding).

    ``weight`` is ``[C_in, C_out, kH, kW]``; the output is
    ``[C_out, stride*(H-1)+kH, stride*(W-1)+kW]``.
    """
    x = np.asarray(x)
    weight = np.asarray(weight)
    if x.ndim != 3:
        raise ShapeError(f"transposed_conv2d input must be [C,H,W], got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"transposed_conv2d weight must be [C_in,C_out,kH,kW], got {weight.shape}")
    c_in, h, w = x.shape
    wc_in, c_out, kh, kw = weight.shape
    if wc_in != c_in:
        raise ShapeError(f"transposed_conv2d channel mismatch: input has {c_in}, weight expects {wc_in}")
    sh, sw = _pair(stride)
    if sh < 1 or sw < 1:
        raise ShapeError(f"stride must be >= 1, got {(sh, sw)}")
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"transposed_conv2d bias must have shape ({c_out},), got {bias.shape}")
    out_dtype = _out_dtype(x, weight)
    ho = sh * (h - 1) + kh
    wo = sw * (w - 1) + kw
    xf = x.astype(F64).reshape(c_in, h * w)
    wf = weight.astype(F64)
    if (sh, sw) == (kh, kw):
        # taps never overlap: one product, then interleave
        taps = wf.reshape(c_in, c_out * kh * kw).T @ xf
        out = taps.reshape(c_out, kh, kw, h, w).transpose(0, 3, 1, 4, 2).reshape(c_out, ho, wo)
        if bias is not None:
            out = out + bias.astype(F64)[:, None, None]
        return out.astype(out_dtype)
    out = np.zeros((c_out, ho, wo), dtype=F64)
    for i in range(kh):
        for j in range(kw):
            tap = (wf[:, :, i, j].T @ xf).reshape(c_out, h, w)
            out[:, i:i + sh * (h - 1) + 1:sh, j:j + sw * (w - 1) + 1:sw] += tap
    if bias is not None:
        out += bias.astype(F64)[:, None, None]
    return out.astype(out_dtype)


# --------------------------------------------------------------------------
# Resampling and pooling
# --------------------------------------------------------------------------

def _bilinear_taps(n_in: int, n_out: int):
    src = (np.arange(n_out, dtype=F64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(x, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a ``[C, H, W]`` (or ``[H, W]``) map, half-pixel centers."""
    x = np.asarray(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be >= 1, got {out_h}x{out_w}")
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"resize_bilinear expects [C,H,W] or [H,W], got shape {x.shape}")
    _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        out = x.copy()
        return out[0] if squeeze else out
    y0, y1, fy = _bilinear_taps(h, out_h)
    x0, x1, fx = _bilinear_taps(w, out_w)
    xf = x.astype(F64)
    top = xf[:, y0, :] * (1.0 - fy)[None, :, None] + xf[:, y1, :] * fy[None, :, None]
    out = top[:, :, x0] * (1.0 - fx) + top[:, :, x1] * fx
    out = out.astype(x.dtype)
    return out[0] if squeeze else out


def max_pool(x, kernel, stride=None) -> np.ndarray:
    """Max pooling over the spatial axes of ``[C, H, W]`` without padding."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"max_pool expects [C,H,W], got shape {x.shape}")
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    c, h, w = x.shape
    if kh > h or kw > w:
        raise ShapeError(f"pool window {kh}x{kw} larger than input {h}x{w}")
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    out = np.full((c, ho, wo), -np.inf, dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            np.maximum(out, x[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw], out=out)
    return out


# --------------------------------------------------------------------------
# Elementwise and reductions
# --------------------------------------------------------------------------

def softmax(x, axis: int = 0) -> np.ndarray:
    """Max-subtracted softmax along a non-negative ``axis``."""
    x = np.asarray(x)
    _check_axis(x, axis)
    xf = x.astype(F64)
    z = np.exp(xf - xf.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)
    return out.astype(x.dtype if x.dtype in (F32, F64) else F32)


def log_softmax(x, axis: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=F64)
    _check_axis(x, axis)
    m = x.max(axis=axis, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=axis, keepdims=True))


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x)
    xf = x.astype(F64)
    # split by sign so exp never overflows
    out = np.empty_like(xf)
    pos = xf >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xf[pos]))
    ex = np.exp(xf[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.astype(x.dtype if x.dtype in (F32, F64) else F32)


def tanh(x) -> np.ndarray:
    x = np.asarray(x)
    return np.tanh(x)


def relu(x) -> np.ndarray:
    x = np.asarray(x)
    return np.maximum(x, 0).astype(x.dtype)


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return (a.astype(F64) @ b.astype(F64)).astype(_out_dtype(a, b))


def concat(tensors: Sequence, axis: int = 0) -> np.ndarray:
    arrays = [np.asarray(t) for t in tensors]
    if not arrays:
        raise ShapeError("concat needs at least one tensor")
    _check_axis(arrays[0], axis)
    for a in arrays[1:]:
        if a.ndim != arrays[0].ndim:
            raise ShapeError("concat operands differ in rank")
        for d in range(a.ndim):
            if d != axis and a.shape[d] != arrays[0].shape[d]:
                raise ShapeError(f"concat shape mismatch on axis {d}: {a.shape} vs {arrays[0].shape}")
    return np.concatenate(arrays, axis=axis)


# --------------------------------------------------------------------------
# TSR1 interchange
# --------------------------------------------------------------------------

def write_tensor(fp: BinaryIO, x) -> None:
    arr = np.ascontiguousarray(np.asarray(x, dtype="<f4"))
    fp.write(TENSOR_MAGIC)
    fp.write(struct.pack("<I", arr.ndim))
    if arr.ndim:
        fp.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fp.write(arr.tobytes(order="C"))


def _read_exact(fp: BinaryIO, n: int) -> bytes:
    buf = fp.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated tensor stream: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(fp: BinaryIO) -> np.ndarray:
    magic = _read_exact(fp, 4)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}")
    (rank,) = struct.unpack("<I", _read_exact(fp, 4))
    dims = struct.unpack(f"<{rank}I", _read_exact(fp, 4 * rank)) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = _read_exact(fp, 4 * count)
    return np.frombuffer(payload, dtype="<f4").astype(F32).reshape(dims)


def save_tensor(path, x) -> None:
    with open(path, "wb") as fp:
        write_tensor(fp, x)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fp:
        return read_tensor(fp)


def save_archive(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named tensors in sorted-name order (stable bytes for equal content)."""
    buf = io.BytesIO()
    buf.write(ARCHIVE_MAGIC)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        write_tensor(buf, tensors[name])
    Path(path).write_bytes(buf.getvalue())


def load_archive(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fp:
        magic = _read_exact(fp, 4)
        if magic != ARCHIVE_MAGIC:
            raise ValueError(f"bad archive magic {magic!r}, expected {ARCHIVE_MAGIC!r}")
        (count,) = struct.unpack("<I", _read_exact(fp, 4))
        out = {}
        for _ in range(count):
            (n,) = struct.unpack("<I", _read_exact(fp, 4))
            name = _read_exact(fp, n).decode("utf-8")
            out[name] = read_tensor(fp)
        return out
