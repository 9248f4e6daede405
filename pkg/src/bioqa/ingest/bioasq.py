"""BioASQ challenge JSON parsing."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

logger = logging.getLogger(__name__)

QUESTION_TYPES = ("factoid", "list", "yesno")

_PMID_RE = re.compile(r"(\d+)\s*/?\s*$")


class BioASQParseError(ValueError):
    """Raised when a BioASQ document cannot be decoded."""

    def __init__(self, msg, pos=None):
        super().__init__(msg if pos is None else f"{msg} (at char {pos})")
        self.pos = pos


@dataclass
class Snippet:
    text: str
    pmid: str
    begin_section: str = "abstract"
    offset_in_begin_section: int = 0

    def __post_init__(self):
        if not self.text:
            raise ValueError("snippet text must be non-empty")


@dataclass
class BioASQQuestion:
    id: str
    body: str
    qtype: str
    exact_answers: list = field(default_factory=list)  # list of synonym sets
    yesno_answer: Optional[str] = None
    snippets: list = field(default_factory=list)
    document_pmids: list = field(default_factory=list)

    @property
    def synonyms(self):
        """Every gold surface form, in set order, without duplicates."""
        seen = []
        for syn_set in self.exact_answers:
            for s in syn_set:
                if s and s not in seen:
                    seen.append(s)
        return seen


def pmid_from_url(url):
    """``http://www.ncbi.nlm.nih.gov/pubmed/23456`` -> ``"23456"``."""
    if url is None:
        return ""
    m = _PMID_RE.search(str(url))
    return m.group(1) if m else str(url)


def _synonym_sets(raw, qtype):
    # Factoid answers arrive either flat (synonyms of one answer) or nested
    # (one list per candidate); list answers are a list of synonym lists.
    if raw is None:
        return []
    if isinstance(raw, str):
        return [[raw.strip()]] if raw.strip() else []
    sets = []
    flat = [r for r in raw if isinstance(r, str)]
    if flat and qtype == "factoid":
        sets.append([s.strip() for s in flat if s.strip()])
    else:
        sets.extend([s.strip()] for s in flat if s.strip())
    for r in raw:
        if isinstance(r, list):
            syns = []
            for s in r:
                if isinstance(s, list):
                    syns.extend(str(x).strip() for x in s)
                else:
                    syns.append(str(s).strip())
            syns = [s for s in syns if s]
            if syns:
                sets.append(syns)
    return [s for s in sets if s]


def _parse_question(entry):
    qtype = str(entry.get("type", "")).strip().lower()
    snippets = []
    for sn in entry.get("snippets") or []:
        text = sn.get("text") or ""
        if not text.strip():
            continue
        snippets.append(Snippet(
            text=text,
            pmid=pmid_from_url(sn.get("document")),
            begin_section=sn.get("beginSection", "abstract"),
            offset_in_begin_section=int(sn.get("offsetInBeginSection") or 0),
        ))
    pmids = [pmid_from_url(d) for d in entry.get("documents") or []]
    q = BioASQQuestion(
        id=str(entry.get("id", "")),
        body=entry.get("body", ""),
        qtype=qtype,
        snippets=snippets,
        document_pmids=pmids,
    )
    if qtype == "yesno":
        raw = entry.get("exact_answer")
        if isinstance(raw, list):
            raw = raw[0] if raw else None
        if raw is not None:
            q.yesno_answer = str(raw).strip().lower()
            if q.yesno_answer not in ("yes", "no"):
                raise BioASQParseError(f"question {q.id}: bad yes/no answer {raw!r}")
    else:
        q.exact_answers = _synonym_sets(entry.get("exact_answer"), qtype)
    return q


def parse_bioasq(document, report=None):
    """Parse a BioASQ JSON document into questions.

    Summary questions are skipped; questions of an unknown type are skipped
    with a warning. Skip counts are added to ``report`` (a ``Counter``) when
    one is given.
    """
    if isinstance(document, (bytes, bytearray)):
        document = document.decode("utf-8")
    try:
        data = json.loads(document)
    except json.JSONDecodeError as e:
        raise BioASQParseError(f"malformed BioASQ JSON: {e.msg}", e.pos) from e
    if isinstance(data, dict):
        entries = data.get("questions")
    else:
        entries = data
    if not isinstance(entries, list):
        raise BioASQParseError("expected a top-level 'questions' array")

    counts = Counter()
    questions = []
    for entry in entries:
        qtype = str(entry.get("type", "")).strip().lower()
        if qtype == "summary":
            counts["skipped_summary"] += 1
            continue
        if qtype not in QUESTION_TYPES:
            logger.warning("question %s has unknown type %r; skipped", entry.get("id"), qtype)
            counts["skipped_unknown"] += 1
            continue
        questions.append(_parse_question(entry))
        counts[qtype] += 1
    if counts["skipped_summary"]:
        logger.info("skipped %d summary questions", counts["skipped_summary"])
    if report is not None:
        report.update(counts)
    return questions


def load_bioasq(path, report=None):
    with open(path, encoding="utf-8") as f:
        return parse_bioasq(f.read(), report=report)
