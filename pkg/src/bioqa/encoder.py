"""A small bidirectional transformer encoder in numpy, with manual backprop.

Everything runs in float64 so that analytic gradients can be checked
against central finite differences. Layers follow the post-LayerNorm
BERT block: embeddings -> LN -> [self-attention -> add & LN -> GELU FFN ->
add & LN] x n_layers.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import erf

LN_EPS = 1e-12
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_size: int = 64
    n_layers: int = 2
    n_heads: int = 2
    max_positions: int = 384
    intermediate_size: Optional[int] = None
    init_std: float = 0.02

    def __post_init__(self):
        if self.hidden_size % self.n_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by n_heads {self.n_heads}")
        if self.vocab_size < 1 or self.n_layers < 1 or self.max_positions < 1:
            raise ValueError("vocab_size, n_layers and max_positions must be positive")

    @property
    def ffn_size(self):
        return self.intermediate_size or 4 * self.hidden_size


@dataclass
class EncoderOutput:
    token_reps: np.ndarray  # (L, H)

    @property
    def cls_rep(self):
        return self.token_reps[0]


def truncated_normal(rng, shape, std):
    """Normal(0, std) resampled until every draw lies within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def _layer_names(i):
    p = f"layer.{i}."
    return {
        "q": p + "attention.query.weight", "bq": p + "attention.query.bias",
        "k": p + "attention.key.weight", "bk": p + "attention.key.bias",
        "v": p + "attention.value.weight", "bv": p + "attention.value.bias",
        "o": p + "attention.output.weight", "bo": p + "attention.output.bias",
        "ln1_g": p + "attention.ln.gamma", "ln1_b": p + "attention.ln.beta",
        "w1": p + "ffn.in.weight", "b1": p + "ffn.in.bias",
        "w2": p + "ffn.out.weight", "b2": p + "ffn.out.bias",
        "ln2_g": p + "ffn.ln.gamma", "ln2_b": p + "ffn.ln.beta",
    }


class EncoderParams:
    """Named parameter arrays plus the config that shaped them."""

    def __init__(self, config, arrays):
        self.config = config
        self.arrays = arrays
        self._check()

    def _check(self):
        c = self.config
        H = c.hidden_size
        want = {
            "embeddings.token": (c.vocab_size, H),
            "embeddings.segment": (2, H),
            "embeddings.position": (c.max_positions, H),
            "embeddings.ln.gamma": (H,),
            "embeddings.ln.beta": (H,),
        }
        for i in range(c.n_layers):
            n = _layer_names(i)
            for key in ("q", "k", "v", "o"):
                want[n[key]] = (H, H)
                want[n["b" + key]] = (H,)
            want[n["w1"]] = (H, c.ffn_size)
            want[n["b1"]] = (c.ffn_size,)
            want[n["w2"]] = (c.ffn_size, H)
            want[n["b2"]] = (H,)
            for key in ("ln1_g", "ln1_b", "ln2_g", "ln2_b"):
                want[n[key]] = (H,)
        missing = set(want) - set(self.arrays)
        if missing:
            raise ValueError(f"missing encoder arrays: {sorted(missing)}")
        for name, shape in want.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name}: shape {self.arrays[name].shape}, expected {shape}")

    @classmethod
    def initialize(cls, config, seed=0):
        rng = np.random.default_rng(seed)
        H, F, std = config.hidden_size, config.ffn_size, config.init_std
        a = {
            "embeddings.token": truncated_normal(rng, (config.vocab_size, H), std),
            "embeddings.segment": truncated_normal(rng, (2, H), std),
            "embeddings.position": truncated_normal(rng, (config.max_positions, H), std),
            "embeddings.ln.gamma": np.ones(H),
            "embeddings.ln.beta": np.zeros(H),
        }
        for i in range(config.n_layers):
            n = _layer_names(i)
            for key in ("q", "k", "v", "o"):
                a[n[key]] = truncated_normal(rng, (H, H), std)
                a[n["b" + key]] = np.zeros(H)
            a[n["ln1_g"]], a[n["ln1_b"]] = np.ones(H), np.zeros(H)
            a[n["w1"]], a[n["b1"]] = truncated_normal(rng, (H, F), std), np.zeros(F)
            a[n["w2"]], a[n["b2"]] = truncated_normal(rng, (F, H), std), np.zeros(H)
            a[n["ln2_g"]], a[n["ln2_b"]] = np.ones(H), np.zeros(H)
        return cls(config, a)

    def copy(self):
        return EncoderParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}


def batch_arrays(features):
    """Stack features into ``(input_ids, segment_ids, attention_mask)``."""
    ids = np.array([f.input_ids for f in features], dtype=np.int64)
    segs = np.array([f.segment_ids for f in features], dtype=np.int64)
    mask = np.zeros(ids.shape, dtype=bool)
    for b, f in enumerate(features):
        mask[b, : f.n_tokens] = True
    return ids, segs, mask


# -- primitives ----------------------------------------------------------

def _ln_forward(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _ln_backward(dy, cache):
    xhat, rstd, g = cache
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(red)
    db = dy.sum(red)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    return 0.5 * u * (1.0 + erf(u / _SQRT2))


def _gelu_grad(u):
    return 0.5 * (1.0 + erf(u / _SQRT2)) + u * _INV_SQRT_2PI * np.exp(-0.5 * u * u)


def _split_heads(x, n_heads):
    B, L, H = x.shape
    return x.reshape(B, L, n_heads, H // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, nh, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, nh * dh)


def _masked_softmax(scores, key_mask):
    s = np.where(key_mask, scores, -np.inf)
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


# -- forward / backward --------------------------------------------------

def forward_batch(params, input_ids, segment_ids, attention_mask):
    """Token representations ``(B, L, H)`` and the cache for backprop."""
    c = params.config
    a = params.arrays
    B, L = input_ids.shape
    if L > c.max_positions:
        raise ValueError(f"sequence length {L} exceeds max_positions {c.max_positions}")
    if input_ids.min() < 0 or input_ids.max() >= c.vocab_size:
        raise ValueError(f"input id out of range [0, {c.vocab_size})")
    if segment_ids.min() < 0 or segment_ids.max() > 1:
        raise ValueError("segment ids must be 0 or 1")

    x = a["embeddings.token"][input_ids] + a["embeddings.segment"][segment_ids] + a["embeddings.position"][:L]
    h, ln0 = _ln_forward(x, a["embeddings.ln.gamma"], a["embeddings.ln.beta"])
    key_mask = attention_mask[:, None, None, :]
    scale = 1.0 / np.sqrt(c.hidden_size // c.n_heads)
    layers = []
    for i in range(c.n_layers):
        n = _layer_names(i)
        q = _split_heads(h @ a[n["q"]] + a[n["bq"]], c.n_heads)
        k = _split_heads(h @ a[n["k"]] + a[n["bk"]], c.n_heads)
        v = _split_heads(h @ a[n["v"]] + a[n["bv"]], c.n_heads)
        att = _masked_softmax((q @ k.transpose(0, 1, 3, 2)) * scale, key_mask)
        ctx = _merge_heads(att @ v)
        o = ctx @ a[n["o"]] + a[n["bo"]]
        h1, ln1 = _ln_forward(h + o, a[n["ln1_g"]], a[n["ln1_b"]])
        u = h1 @ a[n["w1"]] + a[n["b1"]]
        g = _gelu(u)
        f = g @ a[n["w2"]] + a[n["b2"]]
        h2, ln2 = _ln_forward(h1 + f, a[n["ln2_g"]], a[n["ln2_b"]])
        layers.append((h, q, k, v, att, ctx, ln1, h1, u, g, ln2))
        h = h2
    cache = (input_ids, segment_ids, ln0, layers, scale)
    return h, cache


def backward_batch(params, cache, d_out):
    """Gradients of a scalar loss w.r.t. every encoder array, given
    ``d_out = dLoss/d token_reps``."""
    c = params.config
    a = params.arrays
    input_ids, segment_ids, ln0, layers, scale = cache
    grads = params.zeros_like()
    dh = d_out
    for i in reversed(range(c.n_layers)):
        n = _layer_names(i)
        h, q, k, v, att, ctx, ln1, h1, u, g, ln2 = layers[i]
        dsum2, grads[n["ln2_g"]], grads[n["ln2_b"]] = _ln_backward(dh, ln2)
        dh1 = dsum2.copy()
        grads[n["w2"]] = np.einsum("blf,blh->fh", g, dsum2)
        grads[n["b2"]] = dsum2.sum((0, 1))
        du = (dsum2 @ a[n["w2"]].T) * _gelu_grad(u)
        grads[n["w1"]] = np.einsum("blh,blf->hf", h1, du)
        grads[n["b1"]] = du.sum((0, 1))
        dh1 += du @ a[n["w1"]].T

        dsum1, grads[n["ln1_g"]], grads[n["ln1_b"]] = _ln_backward(dh1, ln1)
        dh_in = dsum1.copy()
        grads[n["o"]] = np.einsum("blh,blk->hk", ctx, dsum1)
        grads[n["bo"]] = dsum1.sum((0, 1))
        dctx = _split_heads(dsum1 @ a[n["o"]].T, c.n_heads)
        datt = dctx @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dctx
        dscores = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        for key, d in (("q", dq), ("k", dk), ("v", dv)):
            dm = _merge_heads(d)
            grads[n[key]] = np.einsum("blh,blk->hk", h, dm)
            grads[n["b" + key]] = dm.sum((0, 1))
            dh_in += dm @ a[n[key]].T
        dh = dh_in

    dx, grads["embeddings.ln.gamma"], grads["embeddings.ln.beta"] = _ln_backward(dh, ln0)
    np.add.at(grads["embeddings.token"], input_ids, dx)
    np.add.at(grads["embeddings.segment"], segment_ids, dx)
    grads["embeddings.position"][: dx.shape[1]] += dx.sum(0)
    return grads


def forward(feature, params):
    ids, segs, mask = batch_arrays([feature])
    reps, _ = forward_batch(params, ids, segs, mask)
    return EncoderOutput(token_reps=reps[0])


# -- checkpoints ---------------------------------------------------------

HEADER_KEY = "__header__"


def save_checkpoint(path, arrays, header):
    """Write named float arrays plus a JSON header to an ``.npz`` file.

    ``header`` must be JSON-serialisable; it is stored under the
    ``__header__`` key as a 0-d unicode array.
    """
    payload = {name: np.asarray(arr) for name, arr in arrays.items()}
    payload[HEADER_KEY] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z[HEADER_KEY]))
        arrays = {k: z[k].copy() for k in z.files if k != HEADER_KEY}
    return arrays, header


def config_to_dict(config):
    return asdict(config)
