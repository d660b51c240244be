"""Sequence-to-parameters calibration network, built on the autodiff tape.

A recurrent encoder reads the (normalized) surveillance feature sequence,
a self-attention pool condenses it into one context vector, and a recurrent
decoder unrolled over relative week positions emits one parameter block per
week. A small feed-forward head plus a sigmoid maps each block into the
disease-specific bounds, so outputs are valid simulator parameters by
construction.

Layout notes: encoder layers are bidirectional with concatenated direction
outputs; the decoder is bidirectional with *summed* direction outputs so the
head input width equals the hidden size. GRU gate matrices are packed in
(r, z, n) row order, stored input-major, i.e. W has shape (in, 3H).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .rng import stream

# parameter bounds: reproduction number, mortality fraction, initial infection
# percentage (covid) / reproduction number, initial infection percentage (flu)
COVID_BOUNDS = (np.array([1.0, 0.001, 0.01]), np.array([8.0, 0.02, 1.0]))
FLU_BOUNDS = (np.array([1.05, 0.1]), np.array([2.6, 5.0]))

MIN_SEQ_COVID = 20
MIN_SEQ_FLU = 5


@dataclass
class CalibNetConfig:
    input_dim: int
    bounds_lower: np.ndarray = field(default_factory=lambda: COVID_BOUNDS[0].copy())
    bounds_upper: np.ndarray = field(default_factory=lambda: COVID_BOUNDS[1].copy())
    hidden_dim: int = 32
    attn_dim: int = 32
    head_hidden: int = 16
    min_seq_len: int = MIN_SEQ_COVID

    def __post_init__(self):
        self.bounds_lower = np.asarray(self.bounds_lower, dtype=np.float64)
        self.bounds_upper = np.asarray(self.bounds_upper, dtype=np.float64)
        if self.bounds_lower.shape != self.bounds_upper.shape or self.bounds_lower.ndim != 1:
            raise ValueError("bounds must be matching 1-D vectors")
        if np.any(self.bounds_upper <= self.bounds_lower):
            raise ValueError("upper bounds must exceed lower bounds")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")

    @property
    def out_dim(self) -> int:
        return self.bounds_lower.shape[0]

    @classmethod
    def for_disease(cls, disease: str, input_dim: int, **over) -> "CalibNetConfig":
        if disease == "covid":
            lo, hi = COVID_BOUNDS
            over.setdefault("min_seq_len", MIN_SEQ_COVID)
        elif disease == "flu":
            lo, hi = FLU_BOUNDS
            over.setdefault("min_seq_len", MIN_SEQ_FLU)
        else:
            raise ValueError(f"unknown disease {disease!r}")
        return cls(input_dim=input_dim, bounds_lower=lo.copy(), bounds_upper=hi.copy(), **over)


def _xavier(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _gru_block(rng, prefix: str, in_dim: int, hidden: int, weights: dict):
    weights[f"{prefix}.W"] = _xavier(rng, in_dim, 3 * hidden, (in_dim, 3 * hidden))
    weights[f"{prefix}.U"] = _xavier(rng, hidden, 3 * hidden, (hidden, 3 * hidden))
    weights[f"{prefix}.bi"] = np.zeros(3 * hidden)
    weights[f"{prefix}.bh"] = np.zeros(3 * hidden)


def init_weights(config: CalibNetConfig, seed: int = 0) -> dict:
    """Xavier-uniform weights, zero biases; deterministic in the seed."""
    rng = stream(seed, "calibnet-init")
    h = config.hidden_dim
    w: dict = {}
    for layer, in_dim in ((0, config.input_dim), (1, 2 * h)):
        for direction in ("fw", "bw"):
            _gru_block(rng, f"enc.l{layer}.{direction}", in_dim, h, w)
    w["attn.Wq"] = _xavier(rng, 2 * h, config.attn_dim, (2 * h, config.attn_dim))
    w["attn.Wk"] = _xavier(rng, 2 * h, config.attn_dim, (2 * h, config.attn_dim))
    w["attn.Wv"] = _xavier(rng, 2 * h, h, (2 * h, h))
    for direction in ("fw", "bw"):
        _gru_block(rng, f"dec.{direction}", 1, h, w)
    w["head.W1"] = _xavier(rng, h, config.head_hidden, (h, config.head_hidden))
    w["head.b1"] = np.zeros(config.head_hidden)
    w["head.W2"] = _xavier(rng, config.head_hidden, config.out_dim,
                           (config.head_hidden, config.out_dim))
    w["head.b2"] = np.zeros(config.out_dim)
    return w


def weights_as_leaves(weights: dict, tape: ad.Tape) -> dict:
    return {k: tape.leaf(v) for k, v in weights.items()}


def _gru_pass(xs, W, U, bi, bh, h0, hidden: int, reverse: bool):
    """Run one GRU direction over xs (T, in); returns list of hidden Values."""
    T = xs.data.shape[0] if isinstance(xs, ad.Value) else xs.shape[0]
    pre_x = ad.matmul(xs, W)  # (T, 3H)
    order = range(T - 1, -1, -1) if reverse else range(T)
    h = h0
    out = [None] * T
    for t in order:
        px = pre_x[t] + bi
        ph = ad.matmul(h, U) + bh
        r = ad.sigmoid(px[0:hidden] + ph[0:hidden])
        z = ad.sigmoid(px[hidden:2 * hidden] + ph[hidden:2 * hidden])
        n = ad.tanh(px[2 * hidden:] + r * ph[2 * hidden:])
        h = (1.0 - z) * n + z * h
        out[t] = h
    return out


def _bidirectional(xs, weights, prefix: str, hidden: int, h0_fw, h0_bw, combine: str):
    fw = _gru_pass(xs, weights[f"{prefix}.fw.W"], weights[f"{prefix}.fw.U"],
                   weights[f"{prefix}.fw.bi"], weights[f"{prefix}.fw.bh"],
                   h0_fw, hidden, reverse=False)
    bw = _gru_pass(xs, weights[f"{prefix}.bw.W"], weights[f"{prefix}.bw.U"],
                   weights[f"{prefix}.bw.bi"], weights[f"{prefix}.bw.bh"],
                   h0_bw, hidden, reverse=True)
    if combine == "concat":
        rows = [ad.concat([f, b], axis=0) for f, b in zip(fw, bw)]
    else:
        rows = [f + b for f, b in zip(fw, bw)]
    return ad.stack(rows)


def pad_sequence(features: np.ndarray, min_len: int) -> np.ndarray:
    """Front-pad short sequences by repeating the first row."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be (steps, dims)")
    if features.shape[0] >= min_len:
        return features
    pad = np.repeat(features[:1], min_len - features.shape[0], axis=0)
    return np.concatenate([pad, features], axis=0)


def encode(features: np.ndarray, config: CalibNetConfig, weights: dict):
    """Two bidirectional recurrent layers; one (2H,) row per padded step."""
    x = pad_sequence(features, config.min_seq_len)
    if x.shape[1] != config.input_dim:
        raise ValueError(f"expected {config.input_dim} feature dims, got {x.shape[1]}")
    h = config.hidden_dim
    zero = ad.constant(np.zeros(h))
    l1 = _bidirectional(ad.constant(x), weights, "enc.l0", h, zero, zero, "concat")
    l2 = _bidirectional(l1, weights, "enc.l1", h, zero, zero, "concat")
    return l2


def attention_pool(encoded, config: CalibNetConfig, weights: dict):
    """Scaled dot-product self-attention, rows summed into one context vector."""
    q = ad.matmul(encoded, weights["attn.Wq"])
    k = ad.matmul(encoded, weights["attn.Wk"])
    v = ad.matmul(encoded, weights["attn.Wv"])
    scores = ad.matmul(q, ad.transpose(k)) / float(np.sqrt(config.attn_dim))
    mixed = ad.matmul(ad.softmax(scores), v)
    return mixed.sum(axis=0)


def decode_and_bound(context, n_weeks: int, config: CalibNetConfig, weights: dict):
    """Unroll the decoder over week positions k/n_weeks and bound the head output.

    Returns a (n_weeks, D) Value with every entry inside
    [bounds_lower, bounds_upper] by the sigmoid mapping.
    """
    if n_weeks < 1:
        raise ValueError("need at least one output week")
    h = config.hidden_dim
    positions = (np.arange(1, n_weeks + 1, dtype=np.float64) / n_weeks).reshape(-1, 1)
    dec = _bidirectional(ad.constant(positions), weights, "dec", h,
                         context, context, "sum")
    rows = []
    for k in range(n_weeks):
        h1 = ad.relu(ad.matmul(dec[k], weights["head.W1"]) + weights["head.b1"])
        rows.append(ad.matmul(h1, weights["head.W2"]) + weights["head.b2"])
    raw = ad.stack(rows)
    lo = np.tile(config.bounds_lower, (n_weeks, 1))
    span = np.tile(config.bounds_upper - config.bounds_lower, (n_weeks, 1))
    return ad.constant(lo) + ad.constant(span) * ad.sigmoid(raw)


def forward(features: np.ndarray, n_weeks: int, config: CalibNetConfig, weights: dict):
    """Full pass: features -> one bounded parameter block per week."""
    encoded = encode(features, config, weights)
    context = attention_pool(encoded, config, weights)
    return decode_and_bound(context, n_weeks, config, weights)


# ---------------------------------------------------------------------------
# checkpoint format: versioned text listing of named tensors

CHECKPOINT_MAGIC = "epigrad-weights v1"


def save_weights(path, weights: dict, meta: dict | None = None):
    with open(path, "w") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        for key, val in (meta or {}).items():
            fh.write(f"meta {key} {val}\n")
        for name in sorted(weights):
            arr = np.asarray(weights[name], dtype=np.float64)
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"tensor {name} {arr.ndim} {dims}\n")
            fh.write(" ".join(repr(float(x)) for x in arr.reshape(-1)) + "\n")


def load_weights(path):
    """Returns (weights dict, meta dict); validates version and shapes."""
    weights: dict = {}
    meta: dict = {}
    with open(path) as fh:
        magic = fh.readline().rstrip("\n")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: unsupported checkpoint format {magic!r}")
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "meta":
                meta[parts[1]] = " ".join(parts[2:])
            elif parts[0] == "tensor":
                name = parts[1]
                ndim = int(parts[2])
                shape = tuple(int(d) for d in parts[3:3 + ndim])
                values = np.array([float(x) for x in fh.readline().split()])
                expect = int(np.prod(shape)) if shape else 1
                if values.size != expect:
                    raise ValueError(
                        f"{path}: tensor {name} has {values.size} values, expected {expect}")
                weights[name] = values.reshape(shape)
            else:
                raise ValueError(f"{path}: unrecognized record {parts[0]!r}")
    return weights, meta
