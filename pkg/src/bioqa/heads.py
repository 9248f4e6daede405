"""Task-specific output layers and their losses.

Factoid/list questions score every passage token with a start vector S and
an end vector E, normalised by a softmax over passage positions. Yes/no
questions put a sigmoid on the dot product of the [CLS] vector with W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .encoder import truncated_normal

PROB_CLAMP = 1e-12


@dataclass
class HeadParams:
    S: np.ndarray
    E: np.ndarray
    W: np.ndarray

    NAMES = ("head.start", "head.end", "head.yes")

    def __post_init__(self):
        shapes = {self.S.shape, self.E.shape, self.W.shape}
        if len(shapes) != 1 or len(self.S.shape) != 1:
            raise ValueError(f"head vectors must share one length, got {shapes}")
        for v in (self.S, self.E, self.W):
            if not np.all(np.isfinite(v)):
                raise ValueError("head parameters must be finite")

    @classmethod
    def initialize(cls, hidden_size, seed=0, std=0.02):
        rng = np.random.default_rng([seed, 1])
        return cls(*(truncated_normal(rng, (hidden_size,), std) for _ in range(3)))

    def as_dict(self):
        return dict(zip(self.NAMES, (self.S, self.E, self.W)))

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[n], dtype=float) for n in cls.NAMES))

    def copy(self):
        return HeadParams(self.S.copy(), self.E.copy(), self.W.copy())


@dataclass
class SpanDistributions:
    p_start: np.ndarray
    p_end: np.ndarray


def masked_softmax(logits, mask):
    """Softmax over positions where ``mask`` is set; other entries are 0."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("softmax mask has no valid position")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def masked_log_softmax(logits, mask):
    z = np.where(mask, logits, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def span_distributions(out, hp, valid_mask):
    """Start/end distributions for one encoder output.

    ``out`` is an :class:`EncoderOutput` or an ``(L, H)`` array.
    """
    T = getattr(out, "token_reps", out)
    return SpanDistributions(
        p_start=masked_softmax(T @ hp.S, valid_mask),
        p_end=masked_softmax(T @ hp.E, valid_mask),
    )


def yes_probability(out, hp):
    C = out.cls_rep if hasattr(out, "cls_rep") else np.asarray(out)
    return float(expit(C @ hp.W))


def span_loss(dists, gold):
    """Mean of the start and end negative log-likelihoods over a batch."""
    if len(dists) != len(gold) or not dists:
        raise ValueError("need one (start, end) gold pair per distribution")
    ls = le = 0.0
    for d, (ys, ye) in zip(dists, gold):
        ps, pe = d.p_start[ys], d.p_end[ye]
        if ps <= 0.0 or pe <= 0.0:
            raise ValueError(f"gold span ({ys}, {ye}) has zero probability")
        ls -= np.log(ps)
        le -= np.log(pe)
    n = len(dists)
    return float((ls / n + le / n) / 2.0)


def yesno_loss(p, y):
    p = float(np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))
    return float(-(y * np.log(p) + (1 - y) * np.log(1.0 - p)))


# -- batched losses with analytic gradients --------------------------------

def span_loss_grad(token_reps, valid_mask, S, E, y_start, y_end):
    """Batched span loss and its gradients.

    Returns ``(loss, d_token_reps, dS, dE)`` for ``token_reps`` of shape
    ``(B, L, H)``; ``valid_mask`` is ``(B, L)``.
    """
    B = token_reps.shape[0]
    rows = np.arange(B)
    if not valid_mask[rows, y_start].all() or not valid_mask[rows, y_end].all():
        raise ValueError("gold position outside the valid mask")
    d_reps = np.zeros_like(token_reps)
    loss = 0.0
    grads = []
    for vec, gold in ((S, y_start), (E, y_end)):
        logits = token_reps @ vec
        logp = masked_log_softmax(logits, valid_mask)
        loss += -logp[rows, gold].mean() / 2.0
        dlogits = np.where(valid_mask, np.exp(logp), 0.0)
        dlogits[rows, gold] -= 1.0
        dlogits /= 2.0 * B
        grads.append(np.einsum("bl,blh->h", dlogits, token_reps))
        d_reps += dlogits[:, :, None] * vec
    return float(loss), d_reps, grads[0], grads[1]


def yesno_loss_grad(cls_reps, W, y):
    """Mean clamped BCE over a batch; returns ``(loss, d_cls_reps, dW)``."""
    y = np.asarray(y, dtype=float)
    B = cls_reps.shape[0]
    p = expit(cls_reps @ W)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean())
    # zero slope where the clamp is active
    dz = np.where(pc == p, p - y, 0.0) / B
    return loss, dz[:, None] * W, cls_reps.T @ dz
