"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numbers
from pathlib import Path

import numpy as np

from .ingest.passages import QAPair
from .tokenization import Feature

QUESTION_TYPES = ("factoid", "list", "yesno")


def check_question_type(qtype):
    if qtype not in QUESTION_TYPES:
        raise ValueError(f"question_type must be one of {QUESTION_TYPES}, got {qtype!r}")
    return qtype


def check_threshold(threshold):
    if not isinstance(threshold, numbers.Real) or not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold!r}")
    return float(threshold)


def check_probabilities(p, name="probabilities"):
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError(f"{name} must be finite and within [0, 1]")
    return p


def check_pairs(pairs, qtype=None):
    """Validate a sequence of QAPairs; returns it as a list."""
    pairs = list(pairs)
    for p in pairs:
        if not isinstance(p, QAPair):
            raise TypeError(f"expected QAPair, got {type(p).__name__}")
        if qtype is not None and p.qtype != qtype:
            raise ValueError(f"pair {p.pair_id} is {p.qtype!r}, expected {qtype!r}")
        for a in p.answers:
            s = a["answer_start"]
            if p.context[s:s + len(a["text"])] != a["text"]:
                raise ValueError(f"pair {p.pair_id}: answer_start does not index the answer text")
    return pairs


def check_features(features, max_seq_len=None):
    """Validate packed features: consistent lengths, [CLS] first, two [SEP]s."""
    features = list(features)
    if not features:
        raise ValueError("no features")
    L = len(features[0].input_ids)
    for f in features:
        if not isinstance(f, Feature):
            raise TypeError(f"expected Feature, got {type(f).__name__}")
        if not (len(f.input_ids) == len(f.segment_ids) == len(f.token_char_spans) == L):
            raise ValueError(f"feature {f.pair_id}/{f.window_index}: ragged arrays")
        if max_seq_len is not None and L != max_seq_len:
            raise ValueError(f"feature length {L} != max_seq_len {max_seq_len}")
    return features


def check_paths_exist(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(p)
