"""scikit-learn style estimators for the QA pipeline.

``QAFeaturizer`` turns QAPairs into packed windows; ``QAReader`` (toy
transformer + task heads) and ``LogitsReplayReader`` (externally computed
logits) turn windows into per-question answers. They compose as

    Pipeline([("featurize", QAFeaturizer()), ("read", QAReader())])
"""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import decoder
from .encoder import (
    EncoderConfig,
    EncoderParams,
    batch_arrays,
    config_to_dict,
    forward_batch,
    load_checkpoint,
    save_checkpoint,
)
from .heads import HeadParams, SpanDistributions, masked_softmax
from .postprocess import LIST_THRESHOLD, assemble_answer, merge
from .tokenization import Vocab, build_vocab, encode_pair
from .trainer import TrainConfig, train
from .validation import check_features, check_pairs, check_question_type, check_threshold

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "bioqa-checkpoint/1"


@dataclass
class FeatureBatch:
    """Packed windows plus the pairs they came from."""

    features: list
    pairs: dict  # pair_id -> QAPair
    vocab_size: int
    unanswerable: list = field(default_factory=list)

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @property
    def qtype(self):
        types = {p.qtype for p in self.pairs.values()}
        return types.pop() if len(types) == 1 else None


class QAFeaturizer(BaseEstimator, TransformerMixin):
    """Tokenize QAPairs into fixed-length question/passage windows.

    Parameters
    ----------
    vocab : Vocab, str or None
        A vocabulary, a path to a one-token-per-line vocab file, or None to
        build a word-level vocabulary from the pairs seen in ``fit``.
    max_vocab_size : int
        Size cap when the vocabulary is built from data.
    max_seq_len, doc_stride : int
        Window length and passage-token step between windows.
    mode : {"auto", "train", "inference"}
        ``auto`` emits supervised windows from ``fit_transform`` and
        inference windows from ``transform``.
    """

    def __init__(self, vocab=None, max_vocab_size=5000, max_seq_len=384, doc_stride=128, mode="auto"):
        self.vocab = vocab
        self.max_vocab_size = max_vocab_size
        self.max_seq_len = max_seq_len
        self.doc_stride = doc_stride
        self.mode = mode

    def fit(self, X, y=None):
        pairs = check_pairs(X)
        if isinstance(self.vocab, Vocab):
            self.vocab_ = self.vocab
        elif self.vocab is not None:
            self.vocab_ = Vocab.from_file(self.vocab)
        else:
            texts = []
            for p in pairs:
                texts += [p.question, p.context]
            self.vocab_ = build_vocab(texts, self.max_vocab_size)
        return self

    def _encode(self, pairs, training):
        feats, unanswerable = [], []
        for p in pairs:
            span = p.answer_char_span() if training and p.qtype != "yesno" else None
            yes = None if p.yesno_label is None else int(p.yesno_label == "yes")
            fs = encode_pair(p.question, p.context, self.vocab_, self.max_seq_len, self.doc_stride,
                             answer_span=span, yes_label=yes, training=training,
                             pair_id=p.pair_id, question_id=p.question_id)
            if training and span is not None and not fs:
                unanswerable.append(p.pair_id)
            feats.extend(fs)
        if unanswerable:
            logger.info("%d pairs have no token-aligned answer window", len(unanswerable))
        return FeatureBatch(feats, {p.pair_id: p for p in pairs}, len(self.vocab_), unanswerable)

    def transform(self, X, training=None):
        check_is_fitted(self, "vocab_")
        pairs = check_pairs(X)
        if training is None:
            training = self.mode == "train"
        return self._encode(pairs, training)

    def fit_transform(self, X, y=None):
        self.fit(X)
        return self.transform(X, training=self.mode != "inference")


class _AnswerMixin:
    """Decoding + post-processing shared by the readers.

    Subclasses provide ``_span_distributions(batch)`` and
    ``_yes_probabilities(batch)``.
    """

    def _decode_one(self, args):
        feat, dist, context = args
        return decoder.nbest(dist, feat, context, self.k, self.max_answer_tokens)

    def predict_candidates(self, X):
        """Per-question merged span candidates, or per-question yes probabilities."""
        qtype = check_question_type(self.question_type)
        by_question = defaultdict(dict)
        if qtype == "yesno":
            probs = self._yes_probabilities(X)
            per_pair = defaultdict(list)
            for f, p in zip(X.features, probs):
                per_pair[f.pair_id].append(float(p))
            out = {}
            for pid in sorted(per_pair):
                # windows of one pair are averaged into one per-pair probability
                pp = per_pair[pid]
                out.setdefault(X.pairs[pid].question_id, []).append(sum(pp) / len(pp))
            return out
        dists = self._span_distributions(X)
        jobs = [(f, d, X.pairs[f.pair_id].context) for f, d in zip(X.features, dists)]
        n_jobs = getattr(self, "n_jobs", 1) or 1
        if n_jobs > 1:
            with ThreadPoolExecutor(n_jobs) as ex:
                results = list(ex.map(self._decode_one, jobs))
        else:
            results = [self._decode_one(j) for j in jobs]
        for f, preds in zip(X.features, results):
            by_question[X.pairs[f.pair_id].question_id].setdefault(f.pair_id, []).append(preds)
        out = {}
        for qid in sorted(by_question):
            per_pair = [decoder.multi_window_collapse(by_question[qid][pid]) for pid in sorted(by_question[qid])]
            out[qid] = merge(qid, per_pair)
        return out

    def predict(self, X):
        """Final answers, one per question, ordered by question id."""
        cands = self.predict_candidates(X)
        questions = {}
        pair_ids = defaultdict(list)
        for p in X.pairs.values():
            questions[p.question_id] = p.question
            pair_ids[p.question_id].append(p.pair_id)
        answers = []
        for qid in sorted(cands):
            c = cands[qid]
            if self.question_type == "yesno":
                answers.append(assemble_answer(qid, "yesno", yes_probs=c, pair_ids=pair_ids[qid]))
            else:
                answers.append(assemble_answer(qid, self.question_type, questions[qid], merged=c,
                                               threshold=check_threshold(self.threshold),
                                               pair_ids=pair_ids[qid]))
        return answers


class QAReader(_AnswerMixin, BaseEstimator):
    """Toy transformer encoder with span (factoid/list) or yes/no heads.

    ``fit`` accepts one FeatureBatch or a list of them; a list is trained as
    consecutive fine-tuning stages carrying parameters forward. With
    ``warm_start`` a second ``fit`` continues from the current parameters.
    """

    def __init__(self, question_type="factoid", hidden_size=64, n_layers=2, n_heads=2,
                 epochs=3, batch_size=8, learning_rate=0.05, seed=0, init_std=0.02,
                 warm_start=False, k=decoder.DEFAULT_K,
                 max_answer_tokens=decoder.DEFAULT_MAX_ANSWER_TOKENS,
                 threshold=LIST_THRESHOLD, n_jobs=1):
        self.question_type = question_type
        self.hidden_size = hidden_size
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.init_std = init_std
        self.warm_start = warm_start
        self.k = k
        self.max_answer_tokens = max_answer_tokens
        self.threshold = threshold
        self.n_jobs = n_jobs

    def _init_params(self, vocab_size, max_positions):
        cfg = EncoderConfig(vocab_size=vocab_size, hidden_size=self.hidden_size, n_layers=self.n_layers,
                            n_heads=self.n_heads, max_positions=max_positions, init_std=self.init_std)
        self.encoder_ = EncoderParams.initialize(cfg, self.seed)
        self.heads_ = HeadParams.initialize(self.hidden_size, self.seed, self.init_std)

    def fit(self, X, y=None):
        check_question_type(self.question_type)
        stages = X if isinstance(X, (list, tuple)) else [X]
        for s in stages:
            check_features(s.features)
        if not (self.warm_start and hasattr(self, "encoder_")):
            self._init_params(stages[0].vocab_size, len(stages[0].features[0].input_ids))
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                          seed=self.seed, question_type=self.question_type)
        self.encoder_, self.heads_, trace = train([s.features for s in stages], cfg, self.encoder_, self.heads_)
        self.loss_trace_ = trace
        return self

    def _encode(self, X):
        check_is_fitted(self, "encoder_")
        feats = check_features(X.features)
        out = []
        for b in range(0, len(feats), max(self.batch_size, 1)):
            ids, segs, mask = batch_arrays(feats[b: b + self.batch_size])
            reps, _ = forward_batch(self.encoder_, ids, segs, mask)
            out.extend(reps)
        return out

    def _span_distributions(self, X):
        return [SpanDistributions(masked_softmax(r @ self.heads_.S, f.passage_mask),
                                  masked_softmax(r @ self.heads_.E, f.passage_mask))
                for r, f in zip(self._encode(X), X.features)]

    def _yes_probabilities(self, X):
        return [float(expit(r[0] @ self.heads_.W)) for r in self._encode(X)]

    def predict_logits(self, X):
        """Raw head scores per window, in the logits-replay record layout."""
        return [decoder.LogitsRecord(f.pair_id, f.window_index, r @ self.heads_.S, r @ self.heads_.E,
                                     float(r[0] @ self.heads_.W))
                for r, f in zip(self._encode(X), X.features)]

    def save(self, path, vocab=None, tokenizer=None):
        """Checkpoint parameters, estimator settings and (optionally) the vocab."""
        check_is_fitted(self, "encoder_")
        header = {
            "format": CHECKPOINT_FORMAT,
            "encoder": config_to_dict(self.encoder_.config),
            "reader": self.get_params(),
            "vocab": list(vocab.tokens) if vocab is not None else None,
            "tokenizer": tokenizer or {},
        }
        arrays = dict(self.encoder_.arrays)
        arrays.update(self.heads_.as_dict())
        save_checkpoint(path, arrays, header)

    @classmethod
    def load(cls, path):
        """Returns ``(reader, header)``."""
        arrays, header = load_checkpoint(path)
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        reader = cls(**header["reader"])
        cfg = EncoderConfig(**header["encoder"])
        heads = {n: arrays.pop(n) for n in HeadParams.NAMES}
        reader.encoder_ = EncoderParams(cfg, arrays)
        reader.heads_ = HeadParams.from_dict(heads)
        return reader, header


class LogitsReplayReader(_AnswerMixin, BaseEstimator):
    """Answers from externally computed per-window logits (JSON lines)."""

    def __init__(self, logits_path=None, question_type="factoid", k=decoder.DEFAULT_K,
                 max_answer_tokens=decoder.DEFAULT_MAX_ANSWER_TOKENS, threshold=LIST_THRESHOLD, n_jobs=1):
        self.logits_path = logits_path
        self.question_type = question_type
        self.k = k
        self.max_answer_tokens = max_answer_tokens
        self.threshold = threshold
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        self.records_ = decoder.read_logits(self.logits_path)
        return self

    def _record(self, f):
        check_is_fitted(self, "records_")
        try:
            return self.records_[(f.pair_id, f.window_index)]
        except KeyError:
            raise KeyError(f"no logits for pair {f.pair_id} window {f.window_index}") from None

    def _span_distributions(self, X):
        return [decoder.distributions_from_logits(self._record(f), f) for f in X.features]

    def _yes_probabilities(self, X):
        return [decoder.yes_probability_from_logit(self._record(f).cls_logit) for f in X.features]
