"""Mini-batch gradient descent over encoder + head parameters."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .encoder import backward_batch, batch_arrays, forward_batch
from .heads import span_loss_grad, yesno_loss_grad

logger = logging.getLogger(__name__)

SPAN_TYPES = ("factoid", "list")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 3
    batch_size: int = 8
    learning_rate: float = 0.05
    seed: int = 0
    question_type: str = "factoid"
    stage_list: list = field(default_factory=list)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.question_type not in ("factoid", "list", "yesno"):
            raise ValueError(f"unknown question type {self.question_type!r}")


def loss_and_gradients(encoder, heads, features, question_type):
    """Loss of one mini-batch and gradients keyed like the parameter dicts."""
    ids, segs, mask = batch_arrays(features)
    reps, cache = forward_batch(encoder, ids, segs, mask)
    head_grads = {name: np.zeros_like(v) for name, v in heads.as_dict().items()}
    if question_type in SPAN_TYPES:
        valid = np.array([f.passage_mask for f in features])
        ys = np.array([f.start_position for f in features])
        ye = np.array([f.end_position for f in features])
        loss, d_reps, dS, dE = span_loss_grad(reps, valid, heads.S, heads.E, ys, ye)
        head_grads["head.start"], head_grads["head.end"] = dS, dE
    else:
        y = np.array([f.yes_label for f in features], dtype=float)
        loss, d_cls, dW = yesno_loss_grad(reps[:, 0, :], heads.W, y)
        d_reps = np.zeros_like(reps)
        d_reps[:, 0, :] = d_cls
        head_grads["head.yes"] = dW
    grads = backward_batch(encoder, cache, d_reps)
    grads.update(head_grads)
    return loss, grads


def _check_features(features, question_type):
    if not features:
        raise ValueError("empty training dataset")
    for f in features:
        if question_type in SPAN_TYPES and f.start_position is None:
            raise ValueError(f"feature {f.pair_id}/{f.window_index} has no span supervision")
        if question_type == "yesno" and f.yes_label is None:
            raise ValueError(f"feature {f.pair_id}/{f.window_index} has no yes/no label")


def train(stages, cfg, encoder, heads, callback=None):
    """Run every stage in order, carrying parameters across stages.

    ``stages`` is a list of feature lists (a bare feature list is one
    stage). Parameters are updated in place on copies; the originals are
    untouched. A single RNG, seeded once, drives all per-epoch shuffles,
    so two stages over the same data replay one stage of doubled epochs.

    Returns ``(encoder, heads, trace)`` where ``trace`` holds one
    ``{"epoch", "stage", "mean_loss"}`` row per epoch.
    """
    if stages and not isinstance(stages[0], (list, tuple)):
        stages = [stages]
    if not stages:
        raise ValueError("empty training dataset: no stages")
    for feats in stages:
        _check_features(feats, cfg.question_type)

    encoder, heads = encoder.copy(), heads.copy()
    params = dict(encoder.arrays)
    params.update(heads.as_dict())
    rng = np.random.default_rng(cfg.seed)
    trace = []
    epoch = 0
    for stage, feats in enumerate(stages):
        n = len(feats)
        for _ in range(cfg.epochs):
            epoch += 1
            order = rng.permutation(n)
            total = 0.0
            for b in range(0, n, cfg.batch_size):
                batch = [feats[i] for i in order[b: b + cfg.batch_size]]
                loss, grads = loss_and_gradients(encoder, heads, batch, cfg.question_type)
                if not np.isfinite(loss):
                    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
                    raise TrainingDiverged(
                        f"non-finite loss at stage {stage} epoch {epoch} batch {b // cfg.batch_size}; "
                        f"non-finite gradients in {bad[:5]}")
                for name, g in grads.items():
                    params[name] -= cfg.learning_rate * g
                total += loss * len(batch)
            row = {"epoch": epoch, "stage": stage, "mean_loss": total / n}
            trace.append(row)
            logger.info("stage %d epoch %d mean loss %.6f", stage, epoch, row["mean_loss"])
            if callback is not None:
                callback(row)
    return encoder, heads, trace


def write_loss_trace(trace, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["epoch", "stage", "mean_loss"])
        w.writeheader()
        for row in trace:
            w.writerow({**row, "mean_loss": repr(row["mean_loss"])})
