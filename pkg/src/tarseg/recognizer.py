"""Attention-based recognizer: holistic encoder plus a 2D-attention decoder.

Shapes used throughout: fused features ``[C, H, W]``, hidden size ``D``,
attention size ``A``, embedding size ``E`` and ``K`` symbol classes.

Recurrent cells are standard 4-gate LSTMs with gate order (input, forget,
candidate, output).  Class ids 0, 1 and 2 are reserved for start, end and
padding.  Greedy decoding breaks argmax ties toward the lowest class id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng
from .tensor import F32, F64, ShapeError, conv2d, log_softmax

START, END, PAD = 0, 1, 2
RESERVED = 3


@dataclass
class LSTMWeights:
    w_ih: np.ndarray  # [4H, I]
    w_hh: np.ndarray  # [4H, H]
    b: np.ndarray  # [4H]

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]

    @classmethod
    def random(cls, rng, n_in: int, n_hidden: int, scale: float = 1.0):
        s = scale / np.sqrt(n_hidden)
        return cls(
            rng.uniform(-s, s, (4 * n_hidden, n_in)).astype(F32),
            rng.uniform(-s, s, (4 * n_hidden, n_hidden)).astype(F32),
            rng.uniform(-s, s, 4 * n_hidden).astype(F32),
        )

    @classmethod
    def zeros(cls, n_in: int, n_hidden: int):
        return cls(np.zeros((4 * n_hidden, n_in), F32), np.zeros((4 * n_hidden, n_hidden), F32),
                   np.zeros(4 * n_hidden, F32))


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_cell(x, h, c, w: LSTMWeights):
    """One LSTM step computed in float64; returns ``(h, c)`` in float64."""
    z = w.w_ih.astype(F64) @ np.asarray(x, F64) + w.w_hh.astype(F64) @ np.asarray(h, F64) + w.b.astype(F64)
    n = w.hidden
    i = _sig(z[:n])
    f = _sig(z[n:2 * n])
    g = np.tanh(z[2 * n:3 * n])
    o = _sig(z[3 * n:])
    c_new = f * np.asarray(c, F64) + i * g
    return o * np.tanh(c_new), c_new


@dataclass
class RecognizerWeights:
    encoder: list[tuple[LSTMWeights, LSTMWeights]]  # two layers of (forward, backward)
    decoder: LSTMWeights
    att_conv: np.ndarray  # [A, C, 3, 3]; the centre tap is the per-position projection
    att_h: np.ndarray  # [A, D]
    att_e: np.ndarray  # [A]
    out_w: np.ndarray  # [K, D + C]
    out_b: np.ndarray  # [K]
    embed: np.ndarray  # [K, E]

    @property
    def channels(self) -> int:
        return self.att_conv.shape[1]

    @property
    def hidden(self) -> int:
        return self.decoder.hidden

    @property
    def num_classes(self) -> int:
        return self.out_w.shape[0]

    def validate(self, channels: int | None = None) -> None:
        c, d, k = self.channels, self.hidden, self.num_classes
        if channels is not None and channels != c:
            raise ShapeError(f"recognizer expects {c} feature channels, got {channels}")
        if d % 2:
            raise ShapeError(f"hidden size must be even for the bidirectional encoder, got {d}")
        (f0, b0), (f1, b1) = self.encoder
        if f0.w_ih.shape[1] != c or b0.w_ih.shape[1] != c:
            raise ShapeError("encoder layer 0 input size must equal feature channels")
        for cell in (f0, b0, f1, b1):
            if cell.hidden != d // 2:
                raise ShapeError("encoder hidden size must be half the decoder hidden size")
        if f1.w_ih.shape[1] != d:
            raise ShapeError("encoder layer 1 input size must equal hidden size")
        if self.att_h.shape[1] != d or self.att_h.shape[0] != self.att_conv.shape[0]:
            raise ShapeError("attention hidden projection shape mismatch")
        if self.att_e.shape != (self.att_conv.shape[0],):
            raise ShapeError("attention score vector shape mismatch")
        if self.out_w.shape[1] != d + c:
            raise ShapeError(f"output projection expects {self.out_w.shape[1]} inputs, need {d + c}")
        if self.embed.shape[0] != k or self.decoder.w_ih.shape[1] != self.embed.shape[1]:
            raise ShapeError("embedding table does not match decoder input or class count")

    @classmethod
    def random(cls, channels: int, hidden: int = 32, att: int = 32, embed: int = 16,
               num_classes: int = 40, seed: int = 0):
        rng = make_rng(seed, "recognizer")
        half = hidden // 2
        enc = [
            (LSTMWeights.random(rng, channels, half), LSTMWeights.random(rng, channels, half)),
            (LSTMWeights.random(rng, hidden, half), LSTMWeights.random(rng, hidden, half)),
        ]
        return cls(
            encoder=enc,
            decoder=LSTMWeights.random(rng, embed, hidden),
            att_conv=(rng.standard_normal((att, channels, 3, 3)) / np.sqrt(9 * channels)).astype(F32),
            att_h=(rng.standard_normal((att, hidden)) / np.sqrt(hidden)).astype(F32),
            att_e=(rng.standard_normal(att) / np.sqrt(att)).astype(F32),
            out_w=(rng.standard_normal((num_classes, hidden + channels)) / np.sqrt(hidden + channels)).astype(F32),
            out_b=np.zeros(num_classes, F32),
            embed=rng.standard_normal((num_classes, embed)).astype(F32),
        )

    @classmethod
    def zeros(cls, channels: int, hidden: int = 32, att: int = 32, embed: int = 16, num_classes: int = 40):
        half = hidden // 2
        return cls(
            encoder=[(LSTMWeights.zeros(channels, half), LSTMWeights.zeros(channels, half)),
                     (LSTMWeights.zeros(hidden, half), LSTMWeights.zeros(hidden, half))],
            decoder=LSTMWeights.zeros(embed, hidden),
            att_conv=np.zeros((att, channels, 3, 3), F32),
            att_h=np.zeros((att, hidden), F32),
            att_e=np.zeros(att, F32),
            out_w=np.zeros((num_classes, hidden + channels), F32),
            out_b=np.zeros(num_classes, F32),
            embed=np.zeros((num_classes, embed), F32),
        )

    def to_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for layer, pair in enumerate(self.encoder):
            for direction, cell in zip(("fwd", "bwd"), pair):
                pre = f"rec.enc.l{layer}.{direction}"
                out[f"{pre}.w_ih"], out[f"{pre}.w_hh"], out[f"{pre}.b"] = cell.w_ih, cell.w_hh, cell.b
        d = self.decoder
        out["rec.dec.w_ih"], out["rec.dec.w_hh"], out["rec.dec.b"] = d.w_ih, d.w_hh, d.b
        out["rec.att.conv"] = self.att_conv
        out["rec.att.w_h"] = self.att_h
        out["rec.att.w_e"] = self.att_e
        out["rec.out.weight"] = self.out_w
        out["rec.out.bias"] = self.out_b
        out["rec.embed"] = self.embed
        return out

    @classmethod
    def from_dict(cls, d) -> "RecognizerWeights":
        from .weights import require

        def cell(pre):
            return LSTMWeights(require(d, f"{pre}.w_ih"), require(d, f"{pre}.w_hh"), require(d, f"{pre}.b"))

        enc = [(cell(f"rec.enc.l{l}.fwd"), cell(f"rec.enc.l{l}.bwd")) for l in (0, 1)]
        return cls(
            encoder=enc,
            decoder=cell("rec.dec"),
            att_conv=require(d, "rec.att.conv"),
            att_h=require(d, "rec.att.w_h"),
            att_e=require(d, "rec.att.w_e"),
            out_w=require(d, "rec.out.weight"),
            out_b=require(d, "rec.out.bias"),
            embed=require(d, "rec.embed"),
        )


@dataclass
class Step:
    attention: np.ndarray  # [H, W]
    glimpse: np.ndarray  # [C]
    hidden: np.ndarray  # [D]
    logits: np.ndarray  # [K]
    symbol: int


@dataclass
class AttentionTrace:
    steps: list[Step] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def symbols(self) -> list[int]:
        return [s.symbol for s in self.steps]

    def instances(self) -> list[Step]:
        """Steps before the end token: one per recognised text instance."""
        out = []
        for s in self.steps:
            if s.symbol == END:
                break
            out.append(s)
        return out

    @property
    def logits(self) -> np.ndarray:
        return np.stack([s.logits for s in self.steps])


def _run_direction(seq, cell: LSTMWeights, reverse: bool):
    n = cell.hidden
    h = np.zeros(n, F64)
    c = np.zeros(n, F64)
    outs = [None] * len(seq)
    order = range(len(seq) - 1, -1, -1) if reverse else range(len(seq))
    for t in order:
        h, c = lstm_cell(seq[t], h, c, cell)
        outs[t] = h
    return outs, h


def encode_holistic(fused, w: RecognizerWeights) -> np.ndarray:
    """Holistic feature ``h_w`` used to initialise the decoder hidden state.

    The map is max-pooled over height into a width-long sequence, run through
    the 2-layer bidirectional LSTM, and the final states of the two top-layer
    directions (forward after the last column, backward after the first) are
    concatenated.
    """
    fused = np.asarray(fused)
    if fused.ndim != 3:
        raise ShapeError(f"fused features must be [C,H,W], got shape {fused.shape}")
    w.validate(fused.shape[0])
    seq = list(fused.astype(F64).max(axis=1).T)  # W x [C]
    finals = None
    for fwd, bwd in w.encoder:
        out_f, h_f = _run_direction(seq, fwd, reverse=False)
        out_b, h_b = _run_direction(seq, bwd, reverse=True)
        seq = [np.concatenate([a, b]) for a, b in zip(out_f, out_b)]
        finals = (h_f, h_b)
    return np.concatenate(finals).astype(F32)


def attention_scores(fused, h_t, w: RecognizerWeights) -> np.ndarray:
    """Unnormalised scores ``w_e . tanh(conv3x3(F) + W_h h_t)`` as an ``[H, W]`` map."""
    proj = conv2d(np.asarray(fused, F64), w.att_conv.astype(F64), None, stride=1, padding=1)
    proj += (w.att_h.astype(F64) @ np.asarray(h_t, F64))[:, None, None]
    e = np.tanh(proj)
    return np.tensordot(w.att_e.astype(F64), e, axes=(0, 0))


def attention_step(fused, h_t, w: RecognizerWeights):
    """Return ``(alpha [H, W], glimpse [C])`` for one decoder state."""
    fused = np.asarray(fused)
    scores = attention_scores(fused, h_t, w)
    z = np.exp(scores - scores.max())
    alpha = z / z.sum()
    glimpse = np.tensordot(fused.astype(F64), alpha, axes=([1, 2], [0, 1]))
    return alpha.astype(F32), glimpse.astype(F32)


def decode(fused, w: RecognizerWeights, max_steps: int, forced=None) -> AttentionTrace:
    """Greedy attention decoding.

    With ``forced`` (a symbol sequence) the previous-symbol input follows that
    sequence instead of the predictions and exactly ``len(forced)`` steps run,
    which is how a second pyramid level is aligned with the first.
    """
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    fused = np.asarray(fused)
    w.validate(fused.shape[0])
    h = encode_holistic(fused, w).astype(F64)
    c = np.zeros_like(h)
    prev = START
    trace = AttentionTrace()
    n_steps = len(forced) if forced is not None else max_steps
    for t in range(n_steps):
        h, c = lstm_cell(w.embed[prev], h, c, w.decoder)
        alpha, glimpse = attention_step(fused, h, w)
        logits = w.out_w.astype(F64) @ np.concatenate([h, glimpse.astype(F64)]) + w.out_b.astype(F64)
        symbol = int(np.argmax(logits))
        trace.steps.append(Step(alpha, glimpse, h.astype(F32), logits, symbol))
        if forced is not None:
            prev = int(forced[t])
            continue
        if symbol == END:
            break
        prev = symbol
    return trace


def recognition_loss_from_logits(logits, gt) -> float:
    """Summed cross-entropy of ``gt`` under per-step softmax(logits)."""
    gt = [int(g) for g in gt]
    if not gt:
        raise ValueError("ground-truth symbol sequence is empty")
    logits = np.atleast_2d(np.asarray(logits, F64))
    if len(gt) > logits.shape[0]:
        raise ValueError(f"ground truth has {len(gt)} symbols but only {logits.shape[0]} steps were decoded")
    k = logits.shape[1]
    total = 0.0
    for t, g in enumerate(gt):
        if not 0 <= g < k:
            raise ValueError(f"ground-truth class {g} outside [0, {k})")
        total -= float(log_softmax(logits[t])[g])
    return total


def recognition_loss(trace: AttentionTrace, gt) -> float:
    """Cross-entropy over the first ``len(gt)`` steps; extra trace steps are ignored.

    A ground truth longer than the trace is an error rather than being padded.
    """
    if not len(gt):
        raise ValueError("ground-truth symbol sequence is empty")
    if len(gt) > len(trace):
        raise ValueError(f"ground truth has {len(gt)} symbols but the trace has {len(trace)} steps")
    return recognition_loss_from_logits(trace.logits[:len(gt)], gt)


def attention_entropy(alpha) -> float:
    a = np.asarray(alpha, F64).ravel()
    a = a[a > 0]
    return float(-(a * np.log(a)).sum())


def load_symbol_table(path) -> list[str]:
    """One character per line, id = line number; ids 0-2 are reserved."""
    with open(path, encoding="utf-8") as fp:
        return [line.rstrip("\n") for line in fp]
