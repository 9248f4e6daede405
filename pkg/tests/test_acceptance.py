"""Acceptance criteria 1-9. Each test appends one PASS/FAIL/WAIVED line that
is printed in the terminal summary."""

import contextlib
import dataclasses
import json
import os
import random
import re
import time

import numpy as np
import pytest

from bioqa import QAFeaturizer, QAReader
from bioqa.cli import main
from bioqa.decoder import LogitsRecord, nbest, write_logits
from bioqa.encoder import EncoderConfig, EncoderParams, batch_arrays, forward_batch
from bioqa.heads import HeadParams, SpanDistributions, span_loss_grad, yesno_loss_grad
from bioqa.ingest import Abstract, BioASQQuestion, Snippet, StrategyConfig, build_pairs
from bioqa.metrics import factoid_metrics, list_scores, yesno_metrics
from bioqa.postprocess import (
    Candidate,
    MergedAnswers,
    decide_yesno,
    ensemble,
    extract_answer_count,
    filter_candidates,
    merge,
    select_factoid,
    select_list,
)
from bioqa.tokenization import Vocab, encode_pair
from bioqa.trainer import loss_and_gradients

from helpers import bioasq_doc, central_difference, synthetic_factoid_entries, synthetic_features

pytestmark = pytest.mark.acceptance


@contextlib.contextmanager
def criterion(log, n, title):
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException as e:
        if isinstance(e, pytest.skip.Exception):
            log.append(f"C{n} WAIVED  {title}: {e.msg}")
        else:
            log.append(f"C{n} FAIL    {title}: {type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}")
        raise
    extra = ", ".join(f"{k}={v}" for k, v in detail.items())
    log.append(f"C{n} PASS    {title} ({time.perf_counter() - t0:.1f}s{', ' + extra if extra else ''})")


# -- 1 ----------------------------------------------------------------------

TABLE1 = {"factoid": (779, 3722), "list": (556, 7716), "yesno": (745, 6676)}


def test_c1_dataset_statistics(acceptance_log, tmp_path, capsys):
    path = os.environ.get("BIOASQ_7B_TRAIN")
    with criterion(acceptance_log, 1, "BioASQ 7b conversion statistics within 2%") as d:
        if not path or not os.path.exists(path):
            pytest.skip("BIOASQ_7B_TRAIN not set or file missing")
        t0 = time.perf_counter()
        for qtype, (n_q, n_pairs) in TABLE1.items():
            code = main(["convert", "--input", path, "--output", str(tmp_path / f"{qtype}.json"),
                         "--qtype", qtype, "--no-undersample"])
            assert code == 0
            stats = dict(line.split(": ", 1) for line in capsys.readouterr().out.splitlines())
            got_q, got_p = int(stats["questions"]), int(stats["pairs"])
            d[qtype] = f"{got_q}q/{got_p}p"
            assert abs(got_q - n_q) <= 0.02 * n_q, (qtype, got_q, n_q)
            assert abs(got_p - n_pairs) <= 0.02 * n_pairs, (qtype, got_p, n_pairs)
        assert time.perf_counter() - t0 < 120


# -- 2 ----------------------------------------------------------------------

def _gradient_errors(qtype, n_samples, rng):
    batch, fz, _ = synthetic_features(4)
    feats = batch.features
    if qtype == "yesno":
        feats = [dataclasses.replace(f, yes_label=i % 2) for i, f in enumerate(feats)]
    cfg = EncoderConfig(vocab_size=len(fz.vocab_), hidden_size=64, n_layers=2, n_heads=2, max_positions=40)
    enc = EncoderParams.initialize(cfg, seed=1)
    heads = HeadParams.initialize(64, seed=1)
    # move away from the near-symmetric initial point so gradients are not vanishingly small
    noise = np.random.default_rng(7)
    for arr in list(enc.arrays.values()) + [heads.S, heads.E, heads.W]:
        arr += noise.normal(0, 0.1, arr.shape)
    _, grads = loss_and_gradients(enc, heads, feats, qtype)
    params = dict(enc.arrays)
    params.update(heads.as_dict())
    used_ids = sorted({i for f in feats for i in f.input_ids[: f.n_tokens]})
    max_len = max(f.n_tokens for f in feats)

    ids, segs, mask = batch_arrays(feats)
    valid = np.array([f.passage_mask for f in feats])

    def loss():
        # forward only; the backward pass is not needed for finite differences
        reps, _ = forward_batch(enc, ids, segs, mask)
        if qtype == "yesno":
            return yesno_loss_grad(reps[:, 0], heads.W, [f.yes_label for f in feats])[0]
        return span_loss_grad(reps, valid, heads.S, heads.E, [f.start_position for f in feats],
                              [f.end_position for f in feats])[0]

    def sample(name, arr):
        if name == "embeddings.token":
            return (int(rng.choice(used_ids)), int(rng.integers(arr.shape[1])))
        if name == "embeddings.position":
            return (int(rng.integers(max_len)), int(rng.integers(arr.shape[1])))
        return tuple(int(rng.integers(s)) for s in arr.shape)

    skip_heads = {"head.yes"} if qtype != "yesno" else {"head.start", "head.end"}
    names = [n for n in params if n not in skip_heads]
    errors, key_bias = [], []
    per_name = max(1, n_samples // len(names) + 1)
    for name in names:
        for _ in range(per_name):
            idx = sample(name, params[name])
            num = central_difference(loss, params[name], idx)
            ana = grads[name][idx]
            if name.endswith("attention.key.bias"):
                # softmax is invariant to a per-query constant, so this gradient is exactly zero
                key_bias.append(max(abs(ana), abs(num)))
                continue
            errors.append(abs(ana - num) / max(abs(ana), abs(num), 1e-8))
    return errors, key_bias


def test_c2_gradient_fidelity(acceptance_log):
    with criterion(acceptance_log, 2, "analytic vs finite-difference gradients, H=64, 2 layers") as d:
        t0 = time.perf_counter()
        rng = np.random.default_rng(0)
        span_err, span_kb = _gradient_errors("factoid", 300, rng)
        yn_err, yn_kb = _gradient_errors("yesno", 300, rng)
        errors = span_err + yn_err
        d["params"] = len(errors)
        d["max_rel_err"] = f"{max(errors):.2e}"
        assert len(errors) >= 500
        assert max(errors) < 1e-4
        assert max(span_kb + yn_kb) < 1e-9
        assert time.perf_counter() - t0 < 30


# -- 3 ----------------------------------------------------------------------

def test_c3_overfit_sanity(acceptance_log):
    with criterion(acceptance_log, 3, "20 synthetic factoid pairs overfit within 200 epochs") as d:
        t0 = time.perf_counter()
        batch, fz, questions = synthetic_features(20)
        assert len(batch.pairs) == 20
        reader = QAReader(epochs=200, batch_size=4, learning_rate=0.05, seed=0).fit(batch)
        final = reader.loss_trace_[-1]["mean_loss"]
        answers = reader.predict(fz.transform(list(batch.pairs.values())))
        preds = {a.question_id: a.factoid for a in answers}
        s, _, _ = factoid_metrics(preds, {q.id: q.exact_answers for q in questions})
        d["final_loss"] = f"{final:.2e}"
        d["SAcc"] = s
        assert final < 0.1
        assert s == 1.0
        assert time.perf_counter() - t0 < 120


# -- 4 ----------------------------------------------------------------------

def _brute(ps, pe, feature, context, k, max_len):
    valid = [s is not None for s in feature.token_char_spans]
    cands = sorted((-(ps[i] * pe[j]), i, j - i, j)
                   for i in range(len(ps)) for j in range(i, min(len(ps), i + max_len))
                   if valid[i] and valid[j])
    out, seen = [], set()
    for neg, i, _, j in cands:
        sp = feature.token_char_spans
        text = context[sp[i][0]: sp[j][1]]
        if text not in seen:
            seen.add(text)
            out.append((text, -neg, i, j))
        if len(out) == k:
            break
    return out


def test_c4_decoder_oracle(acceptance_log):
    with criterion(acceptance_log, 4, "nbest equals brute-force enumeration on 1000 distributions"):
        words = ["abc", "xyz", "p53", "gene", "and", "the", "il", "6"]
        vocab = Vocab(["[PAD]", "[UNK]", "[CLS]", "[SEP]"] + words)
        rng = np.random.default_rng(123)
        for trial in range(1000):
            L = int(rng.integers(6, 33))
            n_words = int(rng.integers(1, L - 3))  # fits the L - 4 token budget
            context = " ".join(rng.choice(words, n_words))
            (f,) = encode_pair("gene", context, vocab, max_seq_len=L, doc_stride=1)
            mask = f.passage_mask
            dists = []
            for _ in range(2):
                raw = rng.integers(1, 4, L).astype(float) if trial % 3 == 0 else rng.random(L)
                raw = np.where(mask, raw, 0.0)
                dists.append(raw / raw.sum())
            k = int(rng.integers(1, 25))
            max_len = int(rng.integers(1, 12))
            got = nbest(SpanDistributions(*dists), f, context, k, max_len)
            want = _brute(dists[0], dists[1], f, context, k, max_len)
            assert [(p.text, p.probability, p.start_token, p.end_token) for p in got] == want, trial


# -- 5 ----------------------------------------------------------------------

class _Store:
    def __init__(self, abstract):
        self.abstract = abstract

    def get(self, pmid):
        return self.abstract


def test_c5_offset_oracle(acceptance_log):
    with criterion(acceptance_log, 5, "full-abstract offsets agree with direct search on 1000 triples"):
        rnd = random.Random(5)
        vocab = ["cell", "tumour", "protein", "binds", "the", "in", "of", "signal", "mouse", "liver"]
        for trial in range(1000):
            sentences = []
            for _ in range(rnd.randint(2, 7)):
                ws = [rnd.choice(vocab) for _ in range(rnd.randint(2, 8))]
                sentences.append(" ".join(ws).capitalize() + ".")
            answer = f"GENE{rnd.randint(0, 9)}"
            target = rnd.randrange(len(sentences))
            ws = sentences[target][:-1].split(" ")
            ws.insert(rnd.randint(0, len(ws)), answer)
            sentences[target] = " ".join(ws) + "."
            if rnd.random() < 0.5:  # a decoy mention before the snippet
                sentences[0] = f"{answer.lower()} " + sentences[0]
            title = rnd.choice(["A study.", f"{answer} review.", "Notes."])
            abstract = Abstract("1", title, " ".join(sentences))
            snippet = sentences[target]
            q = BioASQQuestion("q", "?", "factoid", exact_answers=[[answer]], snippets=[Snippet(snippet, "1")])
            (pair,) = build_pairs(q, StrategyConfig("full_abstract"), _Store(abstract))
            full = abstract.full_text
            snippet_at = full.find(snippet)
            want = full.lower().find(answer.lower(), snippet_at)
            got = pair.answers[0]["answer_start"]
            assert got == want, trial
            assert full[got: got + len(answer)].lower() == answer.lower()


# -- 6 ----------------------------------------------------------------------

def _tp(cands):
    return [(c.text, c.probability) for c in cands]


def _m(*pairs):
    return MergedAnswers("q", [Candidate(t, p) for t, p in pairs])


def test_c6_postprocess_goldens(acceptance_log):
    with criterion(acceptance_log, 6, "post-processing worked examples"):
        assert _tp(merge("q", [[("JBP1", 0.6)], [("JBP1", 0.4)]]).candidates) == [("JBP1", 0.6)]
        assert _tp(merge("q", [[("a", 0.2), ("b", 0.7)]]).candidates) == [("b", 0.7), ("a", 0.2)]
        assert _tp(merge("q", [[("a", 0.3)], [("b", 0.5)]]).candidates) == [("b", 0.5), ("a", 0.3)]
        assert extract_answer_count("Please list 6 symptoms of Scarlet fever") == 6
        assert extract_answer_count("What causes puffy hand syndrome?") is None
        assert extract_answer_count("Which 3 genes regulate X in IL-6 signaling?") == 3
        assert filter_candidates([("(BRCA1", 0.9)]) == []
        assert _tp(filter_candidates([("(p53)", 0.5)])) == [("p53", 0.5)]
        assert _tp(filter_candidates([(",BRCA1,", 0.5)])) == [("BRCA1", 0.5)]
        fga = "fibrinogen A alpha chain (FGA)"
        assert _tp(filter_candidates([(fga, 0.5)])) == [(fga, 0.5)]
        assert select_factoid(_m(("a", 0.9), ("b", 0.5))) == ["a", "b"]
        assert len(select_factoid(_m(*[(str(i), 1 - i / 10) for i in range(7)]))) == 5
        assert select_list(_m(("a", 0.9), ("b", 0.5), ("c", 0.3)), 0.42) == ["a", "b"]
        many = _m(*[(f"s{i}", 0.9 - i / 20) for i in range(9)])
        assert len(select_list(many, 0.42, count=6)) == 6
        assert len(select_list(_m(("a", 0.3), ("b", 0.2)), 0.42, count=6)) == 2
        assert select_list(_m(("a", 0.3), ("b", 0.2)), 0.42) == ["a"]
        assert decide_yesno([0.9, 0.8]) == "yes"
        assert decide_yesno([0.2]) == "no"
        assert decide_yesno([0.4, 0.7]) == "yes"
        assert _tp(ensemble([_m(("a", 0.8), ("b", 0.1))]).candidates) == [("a", 0.8), ("b", 0.1)]
        (a,) = ensemble([_m(("a", 0.8)), _m(("a", 0.4))]).candidates
        assert a.text == "a" and a.probability == pytest.approx(0.6, abs=1e-15)
        assert _tp(ensemble([_m(("a", 0.9)), _m()]).candidates) == [("a", 0.45)]


# -- 7 ----------------------------------------------------------------------

def test_c7_metrics_hand_checks(acceptance_log):
    with criterion(acceptance_log, 7, "metric hand checks and SAcc <= MRR <= LAcc on 1000 random sets"):
        assert factoid_metrics({"q": ["x"]}, {"q": [["x"]]}) == (1.0, 1.0, 1.0)
        assert factoid_metrics({"q": ["a", "b", "gold"]}, {"q": [["gold"]]}) == (0.0, 1.0, 1 / 3)
        assert factoid_metrics({"q": ["a", "b", "c", "d", "e"]}, {"q": [["gold"]]}) == (0.0, 0.0, 0.0)
        assert list_scores(["a", "c"], [["a"], ["c"]]) == (1.0, 1.0, 1.0)
        assert list_scores(["a", "b"], [["a"], ["c"]]) == (0.5, 0.5, 0.5)
        assert list_scores(["a", "A"], [["a"]]) == (0.5, 1.0, 2 / 3)
        assert yesno_metrics({"1": "yes", "2": "no"}, {"1": "yes", "2": "no"})[0] == 1.0
        gold = {"1": "yes", "2": "yes", "3": "no", "4": "no"}
        assert yesno_metrics({k: "yes" for k in gold}, gold)[0] == 1 / 3
        assert yesno_metrics({"1": "no", "2": "yes"}, {"1": "yes", "2": "no"})[0] == 0.0
        rnd = random.Random(7)
        pool = list("abcdefgh")
        for _ in range(1000):
            n = rnd.randint(1, 10)
            gold = {f"q{i}": [rnd.sample(pool, rnd.randint(1, 2))] for i in range(n)}
            preds = {q: rnd.sample(pool, rnd.randint(0, 5)) for q in gold if rnd.random() < 0.9}
            s, l, m = factoid_metrics(preds, gold)
            assert s <= m <= l


# -- 8 ----------------------------------------------------------------------

DISCLAIMER = ("full-scale leaderboard numbers (48.41% MRR, 43.16% F1, 75.87% macro F1) need BioBERT "
              "weights, SQuAD-scale fine-tuning and GPUs; not reproduced here")


def test_c8_disclaimer_and_replay_path(acceptance_log, tmp_path, capsys):
    with criterion(acceptance_log, 8, "logits replay reaches every post-encoder stage; " + DISCLAIMER):
        bioasq = tmp_path / "b.json"
        bioasq.write_text(bioasq_doc(synthetic_factoid_entries(5)))
        squad = tmp_path / "s.json"
        assert main(["convert", "--input", str(bioasq), "--output", str(squad), "--qtype", "factoid"]) == 0
        from bioqa.ingest import load_squad
        pairs = load_squad(squad)
        fz = QAFeaturizer(max_seq_len=48, doc_stride=8).fit(pairs)
        fz.vocab_.to_file(tmp_path / "vocab.txt")
        X = fz.transform(pairs)
        gold_forced, records = {}, []
        for f in X.features:
            ctx = X.pairs[f.pair_id].context
            a = X.pairs[f.pair_id].answers[0]
            s = next(i for i, sp in enumerate(f.token_char_spans) if sp and sp[0] == a["answer_start"])
            start = np.full(len(f.input_ids), -30.0)
            end = np.full(len(f.input_ids), -30.0)
            start[s] = end[s] = 30.0
            records.append(LogitsRecord(f.pair_id, f.window_index, start, end))
            gold_forced[f.question_id] = ctx[f.token_char_spans[s][0]: f.token_char_spans[s][1]]
        write_logits(records, tmp_path / "l.jsonl")
        assert main(["predict", "--input", str(squad), "--qtype", "factoid", "--logits", str(tmp_path / "l.jsonl"),
                     "--vocab", str(tmp_path / "vocab.txt"), "--max-seq-len", "48", "--doc-stride", "8",
                     "--answers", str(tmp_path / "a.json")]) == 0
        answers = json.loads((tmp_path / "a.json").read_text())["questions"]
        assert {q["id"]: q["exact_answer"][0] for q in answers} == gold_forced
        assert main(["evaluate", "--answers", str(tmp_path / "a.json"), "--gold", str(bioasq)]) == 0
        assert re.search(r"SAcc=1\.0000 +LAcc=1\.0000 +MRR=1\.0000", capsys.readouterr().out)


# -- 9 ----------------------------------------------------------------------

def _pipeline_outputs(tmp_path, tag, jobs, capsys):
    d = tmp_path / tag
    d.mkdir()
    entries = synthetic_factoid_entries(12)
    bioasq = tmp_path / "b.json"
    if not bioasq.exists():
        bioasq.write_text(bioasq_doc(entries))
    j = ["--jobs", str(jobs), "--seed", "3"]
    tiny = ["--max-seq-len", "40", "--doc-stride", "8", "--hidden-size", "8", "--layers", "1",
            "--heads", "2", "--epochs", "3", "--batch-size", "4"]
    assert main(["convert", "--input", str(bioasq), "--output", str(d / "s.json"), "--qtype", "factoid", *j]) == 0
    assert main(["train", "--train", str(d / "s.json"), "--output", str(d / "m.npz"), "--qtype", "factoid",
                 "--loss-trace", str(d / "loss.csv"), *tiny, *j]) == 0
    assert main(["predict", "--input", str(d / "s.json"), "--qtype", "factoid", "--model", str(d / "m.npz"),
                 "--answers", str(d / "a.json"), "--nbest", str(d / "n.json"), *j]) == 0
    assert main(["evaluate", "--answers", str(d / "a.json"), "--gold", str(bioasq),
                 "--report", str(d / "r.json"), *j]) == 0
    capsys.readouterr()
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_c9_determinism(acceptance_log, tmp_path, capsys):
    with criterion(acceptance_log, 9, "byte-identical re-runs, including --jobs 4") as d:
        first = _pipeline_outputs(tmp_path, "run1", 1, capsys)
        second = _pipeline_outputs(tmp_path, "run2", 1, capsys)
        parallel = _pipeline_outputs(tmp_path, "run3", 4, capsys)
        d["files"] = len(first)
        assert set(first) == {"s.json", "m.npz", "loss.csv", "a.json", "n.json", "r.json"}
        for name in first:
            assert first[name] == second[name], name
            assert first[name] == parallel[name], name
