"""WordPiece tokenization, question/passage packing and char alignment."""

from __future__ import annotations

import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
CONTINUATION = "##"
MAX_WORD_CHARS = 100


class Vocab:
    """Ordered token list; a token's id is its index."""

    def __init__(self, tokens):
        tokens = list(tokens)
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise ValueError(f"duplicate vocab token {tok!r}")
            index[tok] = i
        missing = [s for s in SPECIALS if s not in index]
        if missing:
            raise ValueError(f"vocab lacks special tokens {missing}")
        self.tokens = tokens
        self._index = index

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self._index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def id(self, tok):
        return self._index.get(tok, self._index[UNK])

    def ids(self, toks):
        return [self.id(t) for t in toks]

    @property
    def pad_id(self):
        return self._index[PAD]

    @property
    def cls_id(self):
        return self._index[CLS]

    @property
    def sep_id(self):
        return self._index[SEP]

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls(line.rstrip("\n") for line in f if line.rstrip("\n"))

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.tokens:
                f.write(tok + "\n")


def _is_punctuation(ch):
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def pre_tokenize(text):
    """Whitespace/punctuation split. Yields ``(word, start, end)`` triples
    where every punctuation character is its own word."""
    words = []
    start = None
    for i, ch in enumerate(text):
        if ch.isspace() or _is_punctuation(ch):
            if start is not None:
                words.append((text[start:i], start, i))
                start = None
            if not ch.isspace():
                words.append((ch, i, i + 1))
        elif start is None:
            start = i
    if start is not None:
        words.append((text[start:], start, len(text)))
    return words


def _lower_with_map(word):
    low, src = [], []
    for i, ch in enumerate(word):
        for c in ch.lower():
            low.append(c)
            src.append(i)
    return "".join(low), src


def _wordpiece_word(word, vocab):
    """Greedy longest-match-first pieces of one lowercased word.

    Returns ``[(piece, start, end)]`` with offsets into ``word``, or None
    when the word cannot be decomposed.
    """
    if len(word) > MAX_WORD_CHARS:
        return None
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        cur = None
        while start < end:
            sub = word[start:end]
            if start > 0:
                sub = CONTINUATION + sub
            if sub in vocab:
                cur = sub
                break
            end -= 1
        if cur is None:
            return None
        pieces.append((cur, start, end))
        start = end
    return pieces


def tokenize_with_offsets(text, vocab):
    """WordPiece tokens of ``text`` with their character spans in ``text``."""
    out = []
    for word, ws, we in pre_tokenize(text):
        low, src = _lower_with_map(word)
        pieces = _wordpiece_word(low, vocab)
        if pieces is None:
            out.append((UNK, ws, we))
            continue
        for piece, a, b in pieces:
            out.append((piece, ws + src[a], ws + src[b - 1] + 1))
    return out


def wordpiece(text, vocab):
    return [tok for tok, _, _ in tokenize_with_offsets(text, vocab)]


def build_vocab(texts, max_size=5000):
    """Word-level vocabulary with single-character fallback pieces.

    Every character seen gets both a word-initial and a ``##`` entry so
    any seen word decomposes without [UNK]; remaining room goes to the
    most frequent whole words.
    """
    words = Counter()
    chars = set()
    for t in texts:
        for w, _, _ in pre_tokenize(t):
            low, _ = _lower_with_map(w)
            words[low] += 1
            chars.update(low)
    tokens = list(SPECIALS)
    tokens += sorted(chars)
    tokens += [CONTINUATION + c for c in sorted(chars)]
    have = set(tokens)
    for w, _ in sorted(words.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(tokens) >= max_size:
            break
        if w not in have:
            tokens.append(w)
            have.add(w)
    return Vocab(tokens)


@dataclass
class Feature:
    """One packed ``[CLS] question [SEP] passage-window [SEP] [PAD]*`` window."""

    pair_id: str
    window_index: int
    input_ids: list
    segment_ids: list
    token_char_spans: list  # per position; None except for passage tokens
    n_tokens: int  # positions before padding
    start_position: Optional[int] = None
    end_position: Optional[int] = None
    yes_label: Optional[int] = None
    question_id: Optional[str] = None

    @property
    def passage_mask(self):
        return np.array([s is not None for s in self.token_char_spans], dtype=bool)

    @property
    def attention_mask(self):
        mask = np.zeros(len(self.input_ids), dtype=bool)
        mask[: self.n_tokens] = True
        return mask

    @property
    def has_span(self):
        return self.start_position is not None


def window_starts(n_passage, budget, doc_stride):
    """Start offsets of the passage windows."""
    if doc_stride >= budget:
        raise ValueError(f"doc_stride ({doc_stride}) must be smaller than the window budget ({budget})")
    if doc_stride < 1:
        raise ValueError("doc_stride must be >= 1")
    starts = [0]
    while starts[-1] + budget < n_passage:
        starts.append(starts[-1] + doc_stride)
    return starts


def encode_pair(question, context, vocab, max_seq_len=384, doc_stride=128,
                answer_span=None, yes_label=None, training=False, pair_id="",
                question_id=None):
    """Tokenize and pack a question-passage pair into fixed-length windows.

    ``answer_span`` is a ``(start, end)`` character interval in ``context``.
    It maps to token positions only when both ends fall on token
    boundaries. In training mode windows lacking the whole span are
    dropped, so an empty list means the pair is unanswerable.
    """
    q_toks = wordpiece(question, vocab)
    if max_seq_len <= len(q_toks) + 3:
        raise ValueError(f"max_seq_len {max_seq_len} leaves no room for a {len(q_toks)}-token question")
    p_toks = tokenize_with_offsets(context, vocab)
    budget = max_seq_len - len(q_toks) - 3
    starts = window_starts(len(p_toks), budget, doc_stride)

    tok_start = tok_end = None
    if answer_span is not None:
        cs, ce = answer_span
        by_start = {s: i for i, (_, s, _) in enumerate(p_toks)}
        by_end = {e: i for i, (_, _, e) in enumerate(p_toks)}
        tok_start, tok_end = by_start.get(cs), by_end.get(ce)
        if tok_start is None or tok_end is None or tok_start > tok_end:
            tok_start = tok_end = None
            logger.debug("answer span %s of %s is not token-aligned", answer_span, pair_id)

    head = [vocab.cls_id] + vocab.ids(q_toks) + [vocab.sep_id]
    offset = len(head)
    features = []
    for w, ws in enumerate(starts):
        window = p_toks[ws: ws + budget]
        ids = head + [vocab.id(t) for t, _, _ in window] + [vocab.sep_id]
        n = len(ids)
        segs = [0] * offset + [1] * (n - offset)
        spans = [None] * offset + [(s, e) for _, s, e in window] + [None]
        pad = max_seq_len - n
        start_pos = end_pos = None
        if tok_start is not None and ws <= tok_start and tok_end < ws + len(window):
            start_pos = offset + tok_start - ws
            end_pos = offset + tok_end - ws
        if training and answer_span is not None and start_pos is None:
            continue
        features.append(Feature(
            pair_id=pair_id,
            window_index=w,
            input_ids=ids + [vocab.pad_id] * pad,
            segment_ids=segs + [0] * pad,
            token_char_spans=spans + [None] * pad,
            n_tokens=n,
            start_position=start_pos,
            end_position=end_pos,
            yes_label=yes_label,
            question_id=question_id,
        ))
    return features


def token_span_to_text(feature, context, start, end):
    """Original-context text covered by passage tokens ``start..end``."""
    if start > end:
        raise ValueError(f"start ({start}) > end ({end})")
    spans = feature.token_char_spans
    for i in (start, end):
        if not 0 <= i < len(spans) or spans[i] is None:
            raise ValueError(f"position {i} is not a passage token")
    return context[spans[start][0]: spans[end][1]]
