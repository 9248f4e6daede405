"""Command-line interface: convert, train, predict, evaluate, ensemble.

Every flag can also come from a ``key = value`` config file passed with
``--config``; flags given on the command line win. ``--show-config``
prints the effective settings and exits.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .decoder import write_logits
from .estimators import LogitsReplayReader, QAFeaturizer, QAReader
from .ingest import (
    AbstractStore,
    StrategyConfig,
    build_pairs,
    load_bioasq,
    load_squad,
    to_squad_json,
    undersample_yesno,
)
from .metrics import evaluate
from .postprocess import (
    LIST_THRESHOLD,
    Candidate,
    MergedAnswers,
    answers_to_json,
    assemble_answer,
    ensemble,
)
from .tokenization import Vocab
from .trainer import write_loss_trace
from .validation import check_paths_exist, check_threshold

logger = logging.getLogger("bioqa")

QTYPES = ("factoid", "list", "yesno")


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    cfg = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg[key.replace("-", "_")] = value
    return cfg


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text if text.endswith("\n") else text + "\n")


# -- convert ---------------------------------------------------------------

def cmd_convert(args):
    report = Counter()
    questions = [q for q in load_bioasq(args.input, report=report) if q.qtype == args.qtype]
    questions.sort(key=lambda q: q.id)
    cfg = StrategyConfig(args.strategy, args.n_append)
    store = AbstractStore(args.cache_dir, offline=args.offline) if args.strategy != "snippet_asis" else None
    training = not args.inference

    def work(q):
        rep = Counter()
        return build_pairs(q, cfg, store, training=training, report=rep), rep

    if args.jobs > 1:
        with ThreadPoolExecutor(args.jobs) as ex:
            results = list(ex.map(work, questions))
    else:
        results = [work(q) for q in questions]
    pairs = []
    for ps, rep in results:
        pairs.extend(ps)
        report.update(rep)

    stats = {"qtype": args.qtype, "strategy": args.strategy, "questions": len(questions),
             "questions_with_pairs": len({p.question_id for p in pairs}), "pairs": len(pairs)}
    if args.qtype == "yesno" and training:
        stats["pairs_before_undersampling"] = len(pairs)
        if args.undersample:
            pairs = undersample_yesno(pairs, args.seed)
        stats["pairs"] = len(pairs)
        stats["yes"] = sum(p.yesno_label == "yes" for p in pairs)
        stats["no"] = sum(p.yesno_label == "no" for p in pairs)
    stats.update({k: v for k, v in sorted(report.items()) if k not in QTYPES})
    _write(args.output, to_squad_json(pairs, training=training))
    for k, v in stats.items():
        print(f"{k}: {v}")
    return 0


# -- train ---------------------------------------------------------------

def cmd_train(args):
    stages = [load_squad(p) for p in args.train]
    allowed = {"yesno"} if args.qtype == "yesno" else {"factoid", "list"}
    for path, pairs in zip(args.train, stages):
        bad = {p.qtype for p in pairs} - allowed
        if bad:
            raise SystemExit(f"{path}: contains {sorted(bad)} pairs, cannot train a {args.qtype} model")
    featurizer = QAFeaturizer(vocab=args.vocab, max_vocab_size=args.max_vocab_size,
                              max_seq_len=args.max_seq_len, doc_stride=args.doc_stride, mode="train")
    featurizer.fit([p for pairs in stages for p in pairs])
    batches = [featurizer.transform(pairs) for pairs in stages]
    for path, b in zip(args.train, batches):
        print(f"{path}: {len(b.pairs)} pairs -> {len(b)} windows ({len(b.unanswerable)} unaligned)")
    reader = QAReader(question_type=args.qtype, hidden_size=args.hidden_size, n_layers=args.layers,
                      n_heads=args.heads, epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.lr, seed=args.seed)
    reader.fit(batches)
    tok = {"max_seq_len": args.max_seq_len, "doc_stride": args.doc_stride}
    reader.save(args.output, vocab=featurizer.vocab_, tokenizer=tok)
    if args.loss_trace:
        write_loss_trace(reader.loss_trace_, args.loss_trace)
    last = reader.loss_trace_[-1]
    print(f"final mean loss (epoch {last['epoch']}): {last['mean_loss']:.6f}")
    return 0


# -- predict ---------------------------------------------------------------

def _nbest_doc(qtype, cands, questions):
    out = []
    for qid in sorted(cands):
        entry = {"id": qid, "question": questions[qid]}
        if qtype == "yesno":
            entry["yes_probabilities"] = cands[qid]
        else:
            entry["candidates"] = [{"text": c.text, "probability": c.probability}
                                   for c in cands[qid].candidates]
        out.append(entry)
    return {"qtype": qtype, "questions": out}


def cmd_predict(args):
    if bool(args.model) == bool(args.logits):
        raise SystemExit("give exactly one of --model or --logits")
    check_threshold(args.threshold)
    pairs = [p for p in load_squad(args.input) if p.qtype == args.qtype]
    if args.model:
        reader, header = QAReader.load(args.model)
        reader.set_params(k=args.k, max_answer_tokens=args.max_answer_tokens,
                          threshold=args.threshold, n_jobs=args.jobs, question_type=args.qtype)
        tok = header.get("tokenizer", {})
        vocab = Vocab(header["vocab"]) if header.get("vocab") else Vocab.from_file(args.vocab)
        max_seq_len = tok.get("max_seq_len", args.max_seq_len)
        doc_stride = tok.get("doc_stride", args.doc_stride)
    else:
        if not args.vocab:
            raise SystemExit("--logits needs --vocab")
        reader = LogitsReplayReader(args.logits, question_type=args.qtype, k=args.k,
                                    max_answer_tokens=args.max_answer_tokens,
                                    threshold=args.threshold, n_jobs=args.jobs).fit()
        vocab = Vocab.from_file(args.vocab)
        max_seq_len, doc_stride = args.max_seq_len, args.doc_stride
    featurizer = QAFeaturizer(vocab=vocab, max_seq_len=max_seq_len, doc_stride=doc_stride,
                              mode="inference").fit(pairs)
    batch = featurizer.transform(pairs)
    if args.save_logits:
        if not isinstance(reader, QAReader):
            raise SystemExit("--save-logits needs --model")
        write_logits(reader.predict_logits(batch), args.save_logits)
    cands = reader.predict_candidates(batch)
    questions = {p.question_id: p.question for p in pairs}
    answers = []
    pair_ids = {}
    for p in pairs:
        pair_ids.setdefault(p.question_id, []).append(p.pair_id)
    for qid in sorted(cands):
        if args.qtype == "yesno":
            answers.append(assemble_answer(qid, "yesno", yes_probs=cands[qid], pair_ids=pair_ids[qid]))
        else:
            answers.append(assemble_answer(qid, args.qtype, questions[qid], merged=cands[qid],
                                           threshold=args.threshold, use_count=not args.no_count,
                                           use_filter=not args.no_filter, pair_ids=pair_ids[qid]))
    _write(args.answers, answers_to_json(answers))
    if args.nbest:
        _write(args.nbest, json.dumps(_nbest_doc(args.qtype, cands, questions), ensure_ascii=False, indent=2))
    print(f"{len(answers)} questions answered -> {args.answers}")
    return 0


# -- evaluate --------------------------------------------------------------

def load_answers(path):
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if "questions" not in doc:
        raise SystemExit(f"{path}: expected a 'questions' array")
    return {str(q["id"]): q.get("exact_answer") for q in doc["questions"]}


def cmd_evaluate(args):
    report = evaluate(load_answers(args.answers), load_bioasq(args.gold))
    if args.report:
        _write(args.report, report.to_json())
    print(report.to_text())
    return 0


# -- ensemble --------------------------------------------------------------

def cmd_ensemble(args):
    check_threshold(args.threshold)
    docs = []
    for path in args.nbest:
        with open(path, encoding="utf-8") as f:
            docs.append(json.load(f))
    qtypes = {d["qtype"] for d in docs}
    if len(qtypes) != 1:
        raise SystemExit(f"n-best files mix question types: {sorted(qtypes)}")
    qtype = qtypes.pop()
    per_q, questions = {}, {}
    for d in docs:
        for entry in d["questions"]:
            questions[entry["id"]] = entry.get("question", "")
            if qtype == "yesno":
                per_q.setdefault(entry["id"], []).append(entry["yes_probabilities"])
            else:
                cands = [Candidate(c["text"], float(c["probability"])) for c in entry["candidates"]]
                per_q.setdefault(entry["id"], []).append(MergedAnswers(entry["id"], cands))
    answers = []
    for qid in sorted(per_q):
        combined = ensemble(per_q[qid])
        if qtype == "yesno":
            answers.append(assemble_answer(qid, "yesno", yes_probs=[combined]))
        else:
            answers.append(assemble_answer(qid, qtype, questions[qid], merged=combined,
                                           threshold=args.threshold))
    _write(args.answers, answers_to_json(answers))
    print(f"{len(answers)} questions ensembled from {len(docs)} models -> {args.answers}")
    return 0


# -- parser ----------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="bioqa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value defaults file")
        p.add_argument("--show-config", action="store_true", help="print effective settings and exit")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("convert", help="BioASQ JSON -> SQuAD JSON")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--qtype", choices=QTYPES, required=True)
    p.add_argument("--strategy", choices=("snippet_asis", "full_abstract", "appended_snippet"),
                   default="snippet_asis")
    p.add_argument("--n-append", type=int, default=1)
    p.add_argument("--cache-dir", default="abstract_cache")
    p.add_argument("--offline", action="store_true", help="never contact PubMed; cache only")
    p.add_argument("--inference", action="store_true", help="no gold answers; one pair per passage")
    p.add_argument("--undersample", action=argparse.BooleanOptionalAction, default=True,
                   help="balance yes/no training pairs")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="fine-tune the toy encoder + heads")
    common(p)
    p.add_argument("--train", nargs="+", required=True, help="SQuAD files, one per stage, in order")
    p.add_argument("--output", required=True, help="checkpoint path (.npz)")
    p.add_argument("--qtype", choices=QTYPES, required=True)
    p.add_argument("--loss-trace", help="CSV of per-epoch mean loss")
    p.add_argument("--vocab", help="vocab file; built from the training data when omitted")
    p.add_argument("--max-vocab-size", type=int, default=5000)
    p.add_argument("--max-seq-len", type=int, default=384)
    p.add_argument("--doc-stride", type=int, default=128)
    p.add_argument("--hidden-size", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.05)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="answer questions from a SQuAD file")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--qtype", choices=QTYPES, required=True)
    p.add_argument("--model", help="checkpoint written by 'train'")
    p.add_argument("--logits", help="JSON-lines logits file to replay instead of a model")
    p.add_argument("--vocab", help="vocab file (required with --logits)")
    p.add_argument("--answers", required=True)
    p.add_argument("--nbest")
    p.add_argument("--save-logits", help="also write the model's logits in replay format")
    p.add_argument("--max-seq-len", type=int, default=384)
    p.add_argument("--doc-stride", type=int, default=128)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--max-answer-tokens", type=int, default=30)
    p.add_argument("--threshold", type=float, default=LIST_THRESHOLD)
    p.add_argument("--no-count", action="store_true", help="ignore answer counts stated in questions")
    p.add_argument("--no-filter", action="store_true", help="skip parenthesis/comma filtering")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score answers against BioASQ gold")
    common(p)
    p.add_argument("--answers", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="average several models' n-best files")
    common(p)
    p.add_argument("--nbest", nargs="+", required=True)
    p.add_argument("--answers", required=True)
    p.add_argument("--threshold", type=float, default=LIST_THRESHOLD)
    p.set_defaults(func=cmd_ensemble)
    return parser


def _config_path(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Install config-file values as subcommand defaults, then parse."""
    path = _config_path(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    choices = parser._subparsers._group_actions[0].choices
    if path and command in choices:
        cfg = read_config(path)
        subparser = choices[command]
        known = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, raw in cfg.items():
            if key not in known:
                raise SystemExit(f"{path}: unknown setting {key!r} for {command}")
            act = known[key]
            if act.nargs in ("+", "*"):
                defaults[key] = raw.split()
            elif isinstance(act, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = act.type(raw) if act.type else raw
            act.required = False
        subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    args = _apply_config(parser, list(sys.argv[1:] if argv is None else argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.show_config:
        for k, v in sorted(vars(args).items()):
            if k not in ("func", "show_config", "config"):
                print(f"{k} = {' '.join(map(str, v)) if isinstance(v, list) else v}")
        return 0
    try:
        for key in ("input", "gold", "model", "logits", "vocab"):
            check_paths_exist(getattr(args, key, None))
        check_paths_exist(*(getattr(args, "train", None) or []))
        if args.command == "evaluate":
            check_paths_exist(args.answers)
        if args.command == "ensemble":
            check_paths_exist(*args.nbest)
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: no such file: {e.filename or e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
