"""Question-passage pair construction under the three passage strategies."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .abstracts import AbstractFetchError

logger = logging.getLogger(__name__)

STRATEGIES = ("snippet_asis", "full_abstract", "appended_snippet")


class PairBuildError(RuntimeError):
    def __init__(self, question_id, reason):
        super().__init__(f"question {question_id}: {reason}")
        self.question_id = question_id


@dataclass(frozen=True)
class StrategyConfig:
    strategy: str = "snippet_asis"
    n_append: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.n_append < 1:
            raise ValueError("n_append must be >= 1")


@dataclass
class QAPair:
    pair_id: str
    question_id: str
    question: str
    context: str
    qtype: str
    answers: list = field(default_factory=list)  # [{"text": ..., "answer_start": ...}]
    yesno_label: Optional[str] = None

    @property
    def is_impossible(self):
        # yes -> False, no -> True
        if self.yesno_label is None:
            return None
        return self.yesno_label == "no"

    def answer_char_span(self):
        if not self.answers:
            return None
        a = self.answers[0]
        return a["answer_start"], a["answer_start"] + len(a["text"])


def locate_answer_occurrences(context, answer):
    """Start offsets of every case-insensitive occurrence of ``answer``.

    Overlapping occurrences are all reported, ascending.
    """
    if not answer:
        raise ValueError("answer must be non-empty")
    pattern = re.compile("(?=" + re.escape(answer) + ")", re.IGNORECASE)
    return [m.start() for m in pattern.finditer(context)]


def find_snippet(full_text, snippet):
    """Locate ``snippet`` in ``full_text``; whitespace-insensitive on retry.

    Returns the ``(start, end)`` of the match in ``full_text`` or None.
    """
    i = full_text.find(snippet)
    if i >= 0:
        return i, i + len(snippet)
    words = snippet.split()
    if not words:
        return None
    m = re.search(r"\s+".join(map(re.escape, words)), full_text)
    if m:
        return m.start(), m.end()
    return None


def appended_window(sentence_spans, region, n_append):
    """Sentence index range ``(lo, hi)`` (inclusive) of the appended passage.

    The window holds the k sentences overlapping ``region`` plus
    ``n_append`` on each side; when a document edge clips one side the
    other side is extended so that min(2N + k, total) sentences are kept.
    """
    s, e = region
    idx = [i for i, (a, b) in enumerate(sentence_spans) if b > s and a < e]
    if not idx:
        # region in inter-sentence whitespace: take the next sentence
        idx = [next((i for i, (a, _) in enumerate(sentence_spans) if a >= s), len(sentence_spans) - 1)]
    i0, i1 = idx[0], idx[-1]
    n = len(sentence_spans)
    width = min(2 * n_append + (i1 - i0 + 1), n)
    lo = max(0, min(i0 - n_append, n - width))
    return lo, lo + width - 1


def _occurrence_spans(text, synonyms, lo=0, hi=None, first_only=False):
    hi = len(text) if hi is None else hi
    spans = set()
    region = text[lo:hi]
    for syn in synonyms:
        offs = locate_answer_occurrences(region, syn)
        if first_only:
            offs = offs[:1]
        spans.update((lo + o, lo + o + len(syn)) for o in offs)
    return sorted(spans)


class _Passage:
    __slots__ = ("context", "region")

    def __init__(self, context, region):
        self.context = context
        self.region = region  # snippet location inside context, or None


def _get_abstract(q, snippet, store):
    if store is None:
        raise PairBuildError(q.id, "an abstract store is required for this strategy")
    if not snippet.pmid:
        raise PairBuildError(q.id, "snippet has no source document")
    try:
        return store.get(snippet.pmid)
    except AbstractFetchError as e:
        raise PairBuildError(q.id, str(e)) from e


def _passage(q, snippet, cfg, store, report, synonyms):
    if cfg.strategy == "snippet_asis":
        return _Passage(snippet.text, (0, len(snippet.text)))
    abstract = _get_abstract(q, snippet, store)
    full = abstract.full_text
    region = find_snippet(full, snippet.text)
    if region is None:
        report["snippet_not_found"] += 1
        if synonyms:
            hits = _occurrence_spans(full, synonyms, first_only=True)
            if hits:
                report["answer_direct_fallback"] += 1
                region = hits[0] if cfg.strategy == "appended_snippet" else None
                if cfg.strategy == "full_abstract":
                    return _Passage(full, (0, len(full)))
        if region is None:
            if cfg.strategy == "full_abstract" and not synonyms:
                return _Passage(full, None)
            return None
    if cfg.strategy == "full_abstract":
        return _Passage(full, region)
    lo, hi = appended_window(abstract.sentence_spans, region, cfg.n_append)
    a = abstract.sentence_spans[lo][0]
    b = abstract.sentence_spans[hi][1]
    # a snippet may straddle a sentence edge; keep it whole
    a, b = min(a, region[0]), max(b, region[1])
    return _Passage(full[a:b], (region[0] - a, region[1] - a))


def build_pairs(q, cfg=StrategyConfig(), store=None, training=True, report=None):
    """Expand one question into question-passage pairs.

    In training mode factoid/list pairs carry one gold answer each and
    passages without any gold answer are dropped; yes/no pairs carry the
    question's label. In inference mode every passage yields one pair.
    """
    report = report if report is not None else Counter()
    synonyms = q.synonyms if q.qtype in ("factoid", "list") else []
    supervised = training and q.qtype in ("factoid", "list")
    if training and q.qtype == "yesno" and q.yesno_answer is None:
        raise PairBuildError(q.id, "yes/no question without a label in training mode")
    if supervised and not synonyms:
        report["no_gold_answers"] += 1
        return []

    pairs = []
    seen_docs = set()
    for p_idx, sn in enumerate(q.snippets):
        if not training and cfg.strategy == "full_abstract":
            # one passage per abstract at inference time
            if sn.pmid in seen_docs:
                continue
            seen_docs.add(sn.pmid)
        try:
            passage = _passage(q, sn, cfg, store, report, synonyms if supervised else [])
        except PairBuildError:
            if training or cfg.strategy == "snippet_asis":
                raise
            report["abstract_errors"] += 1
            passage = _Passage(sn.text, (0, len(sn.text)))
        if passage is None:
            if supervised:
                report["dropped_unlocatable"] += 1
                continue
            report["snippet_fallback_asis"] += 1
            passage = _Passage(sn.text, (0, len(sn.text)))
        base_id = f"{q.id}_{p_idx:03d}"
        ctx = passage.context

        if not supervised:
            pairs.append(QAPair(
                pair_id=f"{base_id}_000", question_id=q.id, question=q.body,
                context=ctx, qtype=q.qtype,
                yesno_label=q.yesno_answer if q.qtype == "yesno" else None,
            ))
            continue

        if cfg.strategy == "snippet_asis":
            spans = _occurrence_spans(ctx, synonyms)
        elif passage.region is None:
            spans = _occurrence_spans(ctx, synonyms, first_only=True)
        else:
            lo, hi = passage.region
            spans = _occurrence_spans(ctx, synonyms, lo, hi, first_only=True)
        if not spans:
            report["unanswerable_passages"] += 1
            continue
        for m_idx, (s, e) in enumerate(spans):
            pairs.append(QAPair(
                pair_id=f"{base_id}_{m_idx:03d}", question_id=q.id, question=q.body,
                context=ctx, qtype=q.qtype,
                answers=[{"text": ctx[s:e], "answer_start": s}],
            ))
    return pairs


def undersample_yesno(pairs, seed=0):
    """Downsample the majority yes/no class to the minority count.

    Survivors keep their input order, so the result is a subsequence of
    ``pairs`` and fully determined by ``seed``.
    """
    labels = [p.yesno_label for p in pairs]
    if any(p.qtype != "yesno" for p in pairs):
        raise ValueError("undersample_yesno expects only yes/no pairs")
    yes = [i for i, lab in enumerate(labels) if lab == "yes"]
    no = [i for i, lab in enumerate(labels) if lab == "no"]
    if not yes or not no:
        raise ValueError(f"cannot balance: {len(yes)} yes / {len(no)} no pairs")
    rng = np.random.default_rng(seed)
    major, minor = (yes, no) if len(yes) > len(no) else (no, yes)
    kept = rng.choice(len(major), size=len(minor), replace=False)
    keep = set(minor) | {major[i] for i in kept}
    return [p for i, p in enumerate(pairs) if i in keep]
