"""PubMed abstracts: retrieval, on-disk cache and sentence segmentation."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import requests
from filelock import FileLock

logger = logging.getLogger(__name__)

EFETCH_URL = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/efetch.fcgi"

_TERMINATORS = ".!?"


class AbstractFetchError(RuntimeError):
    """An abstract could not be obtained from cache or network."""

    def __init__(self, pmid, reason):
        super().__init__(f"PMID {pmid}: {reason}")
        self.pmid = pmid


def _protected_positions(text):
    # indices strictly inside a matched (...) pair
    protected = [False] * len(text)
    stack = []
    for i, ch in enumerate(text):
        if ch == "(":
            stack.append(i)
        elif ch == ")" and stack:
            j = stack.pop()
            for k in range(j + 1, i):
                protected[k] = True
    return protected


def split_sentences(text):
    """Character spans of the sentences in ``text``.

    A sentence ends at ``.``, ``!`` or ``?`` when followed by whitespace and
    then an uppercase letter or a digit, unless the terminator sits inside
    a matched pair of round brackets. Spans exclude surrounding whitespace.
    """
    protected = _protected_positions(text)
    n = len(text)
    spans = []
    start = 0
    while start < n and text[start].isspace():
        start += 1
    i = start
    while i < n:
        if text[i] in _TERMINATORS and not protected[i]:
            j = i + 1
            while j < n and text[j].isspace():
                j += 1
            if j > i + 1 and j < n and (text[j].isupper() or text[j].isdigit()):
                spans.append((start, i + 1))
                start = j
                i = j
                continue
        i += 1
    end = n
    while end > start and text[end - 1].isspace():
        end -= 1
    if end > start:
        spans.append((start, end))
    return spans


@dataclass
class Abstract:
    pmid: str
    title: str
    body: str
    full_text: str = field(init=False)
    sentence_spans: list = field(init=False)

    def __post_init__(self):
        self.full_text = f"{self.title} {self.body}" if self.title else self.body
        self.sentence_spans = split_sentences(self.full_text)

    def sentences(self):
        return [self.full_text[s:e] for s, e in self.sentence_spans]


def parse_efetch_xml(payload, pmid):
    """Title and abstract body from a PubMed efetch XML response."""
    try:
        root = ET.fromstring(payload)
    except ET.ParseError as e:
        raise AbstractFetchError(pmid, f"unparseable efetch response: {e}") from e
    title_el = root.find(".//ArticleTitle")
    title = " ".join("".join(title_el.itertext()).split()) if title_el is not None else ""
    parts = []
    for el in root.iter("AbstractText"):
        chunk = " ".join("".join(el.itertext()).split())
        if chunk:
            parts.append(chunk)
    return title, " ".join(parts)


class AbstractStore:
    """Abstract lookup backed by a one-JSON-file-per-PMID cache directory.

    Cache misses go to the efetch endpoint unless ``offline`` is set. Writes
    take a per-file lock and land via atomic rename, so concurrent readers
    never see partial files.
    """

    def __init__(self, cache_dir, offline=False, url=EFETCH_URL, session=None, timeout=30.0):
        self.cache_dir = Path(cache_dir)
        self.offline = offline
        self.url = url
        self.session = session
        self.timeout = timeout
        self._memo = {}

    def _path(self, pmid):
        return self.cache_dir / f"{pmid}.json"

    def _read_cache(self, pmid):
        path = self._path(pmid)
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as f:
            rec = json.load(f)
        return rec.get("title", ""), rec.get("body", "")

    def _write_cache(self, pmid, title, body):
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        path = self._path(pmid)
        with FileLock(str(path) + ".lock"):
            fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump({"pmid": pmid, "title": title, "body": body}, f, ensure_ascii=False)
            os.replace(tmp, path)

    def _download(self, pmid):
        if self.offline:
            raise AbstractFetchError(pmid, "not cached and network access is disabled")
        http = self.session or requests
        try:
            resp = http.get(self.url, params={"db": "pubmed", "id": pmid, "retmode": "xml"},
                            timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as e:
            raise AbstractFetchError(pmid, f"network failure: {e}") from e
        return parse_efetch_xml(resp.content, pmid)

    def get(self, pmid):
        if not pmid:
            raise ValueError("pmid must be non-empty")
        if pmid in self._memo:
            return self._memo[pmid]
        cached = self._read_cache(pmid)
        if cached is None:
            title, body = self._download(pmid)
            if body.strip():
                self._write_cache(pmid, title, body)
        else:
            title, body = cached
        if not body.strip():
            raise AbstractFetchError(pmid, "empty abstract body")
        abstract = Abstract(pmid=pmid, title=title, body=body)
        self._memo[pmid] = abstract
        return abstract

    __getitem__ = get


def fetch_abstract(pmid, cache_dir, **kwargs):
    return AbstractStore(cache_dir, **kwargs).get(pmid)
