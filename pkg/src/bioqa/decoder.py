"""n-best span decoding and the logits-replay input path."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .heads import SpanDistributions, masked_softmax
from .tokenization import token_span_to_text

DEFAULT_K = 20
DEFAULT_MAX_ANSWER_TOKENS = 30


@dataclass
class SpanPrediction:
    text: str
    probability: float
    start_token: int
    end_token: int
    pair_id: str
    window_index: int


def nbest(dists, feature, context, k=DEFAULT_K, max_answer_tokens=DEFAULT_MAX_ANSWER_TOKENS):
    """Top-``k`` answer spans of one feature.

    Spans ``i <= j < i + max_answer_tokens`` over passage tokens are scored
    by ``p_start[i] * p_end[j]`` and ranked by (score desc, start asc,
    length asc). Repeated texts keep only their best-ranked instance.
    """
    if k < 1 or max_answer_tokens < 1:
        raise ValueError("k and max_answer_tokens must be >= 1")
    valid = feature.passage_mask
    ps = np.where(valid, dists.p_start, 0.0)
    pe = np.where(valid, dists.p_end, 0.0)
    L = len(ps)
    i, j = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    ok = (j >= i) & (j - i < max_answer_tokens) & valid[:, None] & valid[None, :]
    si, sj = i[ok], j[ok]
    if si.size == 0:
        return []
    score = np.outer(ps, pe)[ok]
    order = np.lexsort((sj - si, si, -score))
    out = []
    seen = set()
    for idx in order:
        a, b = int(si[idx]), int(sj[idx])
        text = token_span_to_text(feature, context, a, b)
        if text in seen:
            continue
        seen.add(text)
        out.append(SpanPrediction(text, float(score[idx]), a, b, feature.pair_id, feature.window_index))
        if len(out) == k:
            break
    return out


def multi_window_collapse(preds):
    """Merge per-window candidate lists of one pair, keeping each text's max."""
    lists = list(preds)
    pair_ids = {p.pair_id for lst in lists for p in lst}
    if len(pair_ids) > 1:
        raise ValueError(f"windows from several pairs: {sorted(pair_ids)}")
    best = {}
    for lst in lists:
        for p in lst:
            cur = best.get(p.text)
            if cur is None or p.probability > cur.probability:
                best[p.text] = p
    # stable: ties keep window order
    return sorted(best.values(), key=lambda p: -p.probability)


# -- logits replay ---------------------------------------------------------

@dataclass
class LogitsRecord:
    pair_id: str
    window_index: int
    start_logits: np.ndarray
    end_logits: np.ndarray
    cls_logit: float = 0.0


def read_logits(path):
    """Records of a JSON-lines logits file keyed by ``(pair_id, window_index)``."""
    records = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                rec = LogitsRecord(
                    pair_id=str(r["pair_id"]),
                    window_index=int(r["window_index"]),
                    start_logits=np.asarray(r.get("start_logits", []), dtype=float),
                    end_logits=np.asarray(r.get("end_logits", []), dtype=float),
                    cls_logit=float(r.get("cls_logit", 0.0)),
                )
            except (KeyError, ValueError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: bad logits record ({e})") from e
            records[(rec.pair_id, rec.window_index)] = rec
    return records


def write_logits(records, path):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps({
                "pair_id": r.pair_id,
                "window_index": r.window_index,
                "start_logits": [float(x) for x in r.start_logits],
                "end_logits": [float(x) for x in r.end_logits],
                "cls_logit": float(r.cls_logit),
            }) + "\n")


def distributions_from_logits(record, feature):
    """Apply the span head's passage masking and softmax to raw logits."""
    L = len(feature.input_ids)
    if len(record.start_logits) != L or len(record.end_logits) != L:
        raise ValueError(
            f"logits for {record.pair_id}/{record.window_index} have length "
            f"{len(record.start_logits)}, features have {L}")
    mask = feature.passage_mask
    return SpanDistributions(masked_softmax(record.start_logits, mask),
                             masked_softmax(record.end_logits, mask))


def yes_probability_from_logit(logit):
    return float(expit(logit))
