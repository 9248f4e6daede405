"""Answer assembly: merging, filtering, selection and ensembling."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Optional

from .validation import check_threshold

logger = logging.getLogger(__name__)

LIST_THRESHOLD = 0.42
FACTOID_TOP = 5

_NUMBER_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}
# a bare numeral, not glued to letters, digits or hyphens, quantifying the next word
_COUNT_RE = re.compile(
    r"(?<![\w-])(\d+|" + "|".join(_NUMBER_WORDS) + r")(?![\w-])(?=\s+[^\W\d_])",
    re.IGNORECASE,
)


@dataclass
class Candidate:
    text: str
    probability: float


@dataclass
class MergedAnswers:
    question_id: str
    candidates: list = field(default_factory=list)

    def texts(self):
        return [c.text for c in self.candidates]


@dataclass
class FinalAnswer:
    question_id: str
    qtype: str
    factoid: Optional[list] = None
    list: Optional[list] = None
    yesno: Optional[str] = None
    provenance: dict = field(default_factory=dict)

    @property
    def exact_answer(self):
        if self.qtype == "factoid":
            return list(self.factoid)
        if self.qtype == "list":
            return [[t] for t in self.list]
        return self.yesno


def normalize_key(text):
    return " ".join(text.casefold().split())


def _combine_max(items):
    """Collapse duplicate normalised texts; keep the max and its surface form.

    Input order breaks probability ties, so results are deterministic.
    """
    best = {}
    for text, prob in items:
        key = normalize_key(text)
        cur = best.get(key)
        if cur is None or prob > cur.probability:
            best[key] = Candidate(text, float(prob))
    return sorted(best.values(), key=lambda c: -c.probability)


def _items(cands):
    for c in cands:
        if isinstance(c, Candidate):
            yield c.text, c.probability
        elif isinstance(c, dict):
            yield c["text"], c["probability"]
        elif hasattr(c, "text") and hasattr(c, "probability"):
            yield c.text, c.probability
        else:
            text, prob = c
            yield text, prob


def merge(question_id, per_pair):
    """Union the candidate lists of one question's pairs, max-combining duplicates."""
    items = [it for cands in per_pair for it in _items(cands)]
    return MergedAnswers(question_id, _combine_max(items))


def extract_answer_count(question):
    """The number of answers a question asks for, if it states one."""
    for m in _COUNT_RE.finditer(question):
        tok = m.group(1).lower()
        n = _NUMBER_WORDS[tok] if tok in _NUMBER_WORDS else int(tok)
        if n > 0:
            return n
    return None


def parens_balanced(text):
    depth = 0
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                return False
    return depth == 0


def _wraps(text):
    # "(" at 0 closes exactly at the last character
    if not (text.startswith("(") and text.endswith(")")):
        return False
    depth = 0
    for i, ch in enumerate(text):
        depth += ch == "("
        depth -= ch == ")"
        if depth == 0:
            return i == len(text) - 1
    return False


def strip_answer(text):
    """Strip wrapping parentheses, edge commas and whitespace to a fixed point."""
    prev = None
    while text != prev:
        prev = text
        text = text.strip().strip(",")
        if _wraps(text):
            text = text[1:-1]
    return text


def filter_candidates(cands):
    """Drop unbalanced-parenthesis answers and clean the rest."""
    kept = []
    for text, prob in _items(cands):
        if not parens_balanced(text):
            continue
        text = strip_answer(text)
        if text:
            kept.append((text, prob))
    return _combine_max(kept)


def select_factoid(m, top=FACTOID_TOP):
    if not m.candidates:
        logger.warning("question %s: no factoid candidates", m.question_id)
    return [c.text for c in m.candidates[:top]]


def select_list(m, threshold=LIST_THRESHOLD, count=None):
    """List answers: the top ``count`` if given, else all above ``threshold``.

    Falls back to the single best candidate when nothing clears the
    threshold.
    """
    check_threshold(threshold)
    if count is not None:
        return [c.text for c in m.candidates[:count]]
    chosen = [c.text for c in m.candidates if c.probability > threshold]
    if not chosen and m.candidates:
        chosen = [m.candidates[0].text]
    return chosen


def decide_yesno(probs):
    probs = list(probs)
    if not probs:
        raise ValueError("no yes/no probabilities to aggregate")
    return "yes" if sum(sorted(probs)) / len(probs) >= 0.5 else "no"


def ensemble(per_model):
    """Average several models' outputs for one question.

    ``per_model`` is either a list of :class:`MergedAnswers` (a text absent
    from a model contributes probability 0) or a list of per-pair yes
    probability lists (the mean of per-model means is returned).
    """
    per_model = list(per_model)
    if not per_model:
        raise ValueError("ensemble needs at least one model")
    if not isinstance(per_model[0], MergedAnswers):
        means = [sum(sorted(p)) / len(p) for p in per_model]
        return sum(means) / len(means)
    n = len(per_model)
    totals, surface, order = {}, {}, []
    for m in per_model:
        for c in m.candidates:
            key = normalize_key(c.text)
            if key not in totals:
                totals[key] = 0.0
                order.append(key)
            totals[key] += c.probability
            if key not in surface or c.probability > surface[key][1]:
                surface[key] = (c.text, c.probability)
    cands = [Candidate(surface[k][0], totals[k] / n) for k in order]
    cands.sort(key=lambda c: -c.probability)
    return MergedAnswers(per_model[0].question_id, cands)


def assemble_answer(question_id, qtype, question="", merged=None, yes_probs=None,
                    threshold=LIST_THRESHOLD, use_count=True, use_filter=True, pair_ids=()):
    """Final answer for one question from its merged candidates or yes probabilities."""
    prov = {"pairs": sorted(pair_ids)}
    if qtype == "yesno":
        return FinalAnswer(question_id, qtype, yesno=decide_yesno(yes_probs), provenance=prov)
    merged = merged or MergedAnswers(question_id)
    if use_filter:
        merged = MergedAnswers(question_id, filter_candidates(merged.candidates))
    if qtype == "factoid":
        return FinalAnswer(question_id, qtype, factoid=select_factoid(merged), provenance=prov)
    count = extract_answer_count(question) if use_count else None
    answers = select_list(merged, threshold, count)
    prov["answer_count"] = count
    prov["fallback"] = bool(count is None and answers
                            and all(c.probability <= threshold for c in merged.candidates))
    return FinalAnswer(question_id, qtype, list=answers, provenance=prov)


def answers_to_json(answers):
    """BioASQ-submission-shaped JSON, ordered by question id."""
    qs = [{"id": a.question_id, "type": a.qtype, "exact_answer": a.exact_answer}
          for a in sorted(answers, key=lambda a: a.question_id)]
    return json.dumps({"questions": qs}, ensure_ascii=False, indent=2)
