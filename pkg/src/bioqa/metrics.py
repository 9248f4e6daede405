"""BioASQ Phase B exact-answer metrics."""

from __future__ import annotations

import json
import logging
import unicodedata
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)


def _strip_punct(s):
    def is_p(ch):
        return unicodedata.category(ch)[0] in "PS"
    a, b = 0, len(s)
    while a < b and is_p(s[a]):
        a += 1
    while b > a and is_p(s[b - 1]):
        b -= 1
    return s[a:b]


def normalize_answer(text):
    """Case-fold, collapse whitespace, strip surrounding punctuation."""
    return _strip_punct(" ".join(str(text).casefold().split())).strip()


def _norm_sets(sets):
    return [{normalize_answer(s) for s in syns} for syns in sets]


def _missing(qid, kind):
    logger.warning("no %s prediction for question %s; scored as wrong", kind, qid)


@dataclass
class EvalReport:
    scores: dict = field(default_factory=dict)  # qtype -> {metric: value}
    counts: dict = field(default_factory=dict)  # qtype -> number of questions
    per_question: dict = field(default_factory=dict)  # qtype -> {qid: {...}}

    def to_json(self):
        return json.dumps({"scores": self.scores, "counts": self.counts,
                           "per_question": self.per_question}, indent=2, sort_keys=True)

    def to_text(self):
        lines = [f"{'type':<8} {'n':>5}  metrics"]
        for qtype in ("factoid", "list", "yesno"):
            if qtype not in self.scores:
                continue
            cells = "  ".join(f"{k}={v:.4f}" for k, v in self.scores[qtype].items())
            lines.append(f"{qtype:<8} {self.counts[qtype]:>5}  {cells}")
        return "\n".join(lines)


def factoid_metrics(preds, gold, per_question=None):
    """Strict accuracy, lenient accuracy and MRR over the gold questions.

    ``preds`` maps question id to up to five ranked answer strings; ``gold``
    maps question id to a list of synonym sets.
    """
    s_hits = l_hits = rr_sum = 0.0
    for qid in sorted(gold):
        syns = set().union(*_norm_sets(gold[qid])) if gold[qid] else set()
        ranked = preds.get(qid)
        if ranked is None:
            _missing(qid, "factoid")
            ranked = []
        rank = next((r for r, p in enumerate(ranked[:5], 1) if normalize_answer(p) in syns), None)
        s = float(rank == 1)
        lenient = float(rank is not None)
        rr = 1.0 / rank if rank else 0.0
        s_hits += s
        l_hits += lenient
        rr_sum += rr
        if per_question is not None:
            per_question[qid] = {"strict": s, "lenient": lenient, "rr": rr}
    n = len(gold)
    if n == 0:
        return 0.0, 0.0, 0.0
    return s_hits / n, l_hits / n, rr_sum / n


def list_scores(pred, gold_sets):
    """Precision, recall, F1 of one list question under one-to-one matching."""
    if not pred or not gold_sets:
        return 0.0, 0.0, 0.0
    sets = _norm_sets(gold_sets)
    used = [False] * len(sets)
    matched = 0
    for p in pred:
        key = normalize_answer(p)
        for i, syns in enumerate(sets):
            if not used[i] and key in syns:
                used[i] = True
                matched += 1
                break
    P = matched / len(pred)
    R = matched / len(sets)
    F = 2 * P * R / (P + R) if P + R > 0 else 0.0
    return P, R, F


def list_metrics(preds, gold, per_question=None):
    """Mean precision, recall and F1 over the gold list questions."""
    tot = [0.0, 0.0, 0.0]
    for qid in sorted(gold):
        pred = preds.get(qid)
        if pred is None:
            _missing(qid, "list")
            pred = []
        scores = list_scores(pred, gold[qid])
        for i, v in enumerate(scores):
            tot[i] += v
        if per_question is not None:
            per_question[qid] = dict(zip(("precision", "recall", "f1"), scores))
    n = len(gold)
    if n == 0:
        return 0.0, 0.0, 0.0
    return tot[0] / n, tot[1] / n, tot[2] / n


def yesno_metrics(preds, gold, per_question=None):
    """Macro-averaged F1 over the yes and no classes, and accuracy."""
    counts = {c: {"tp": 0, "fp": 0, "fn": 0} for c in ("yes", "no")}
    correct = 0
    for qid in sorted(gold):
        g = gold[qid]
        p = preds.get(qid)
        if p is None:
            _missing(qid, "yes/no")
        if p == g:
            correct += 1
            counts[g]["tp"] += 1
        else:
            counts[g]["fn"] += 1
            if p in counts:
                counts[p]["fp"] += 1
        if per_question is not None:
            per_question[qid] = {"correct": float(p == g)}
    f1s = []
    for c in ("yes", "no"):
        tp, fp, fn = counts[c]["tp"], counts[c]["fp"], counts[c]["fn"]
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    n = len(gold)
    return sum(f1s) / 2, (correct / n if n else 0.0)


def evaluate(answers, gold_questions):
    """Score submission-shaped answers against parsed gold questions.

    ``answers`` maps question id to ``exact_answer`` as found in an answers
    file; ``gold_questions`` is a list of BioASQQuestion.
    """
    report = EvalReport()
    by_type = {"factoid": {}, "list": {}, "yesno": {}}
    for q in gold_questions:
        by_type[q.qtype][q.id] = q.yesno_answer if q.qtype == "yesno" else q.exact_answers

    def flat(x):
        return [e[0] if isinstance(e, list) and e else e for e in x if e != []]

    if by_type["factoid"]:
        pq = {}
        preds = {k: flat(v) for k, v in answers.items() if isinstance(v, list)}
        s, l, m = factoid_metrics(preds, by_type["factoid"], pq)
        report.scores["factoid"] = {"SAcc": s, "LAcc": l, "MRR": m}
        report.counts["factoid"] = len(by_type["factoid"])
        report.per_question["factoid"] = pq
    if by_type["list"]:
        pq = {}
        preds = {k: flat(v) for k, v in answers.items() if isinstance(v, list)}
        P, R, F = list_metrics(preds, by_type["list"], pq)
        report.scores["list"] = {"P": P, "R": R, "F1": F}
        report.counts["list"] = len(by_type["list"])
        report.per_question["list"] = pq
    if by_type["yesno"]:
        pq = {}
        preds = {k: str(v).lower() for k, v in answers.items() if isinstance(v, str)}
        mf, acc = yesno_metrics(preds, by_type["yesno"], pq)
        report.scores["yesno"] = {"MacroF1": mf, "Acc": acc}
        report.counts["yesno"] = len(by_type["yesno"])
        report.per_question["yesno"] = pq
    return report


def micro_average(reports):
    """Question-count-weighted average of several reports' scores."""
    out = EvalReport()
    for r in reports:
        for qtype, scores in r.scores.items():
            n = r.counts[qtype]
            acc = out.scores.setdefault(qtype, {k: 0.0 for k in scores})
            for k, v in scores.items():
                acc[k] += v * n
            out.counts[qtype] = out.counts.get(qtype, 0) + n
    for qtype, scores in out.scores.items():
        n = out.counts[qtype]
        for k in scores:
            scores[k] = scores[k] / n if n else 0.0
    return out
