"""SQuAD-format serialisation of question-passage pairs.

Factoid and list pairs go out as SQuAD v1.1 (``answers`` with
``answer_start`` character offsets). Yes/no pairs go out as SQuAD v2.0
with empty ``answers`` and the label in ``is_impossible`` (yes -> false,
no -> true); the literal ``"yes"``/``"no"`` is repeated in an ``answer``
field next to it so the polarity can be audited.
"""

from __future__ import annotations

import json

from .passages import QAPair


class SquadFormatError(ValueError):
    pass


def to_squad_json(pairs, training=True, indent=None):
    qtypes = {p.qtype for p in pairs}
    if len(qtypes) > 1:
        raise SquadFormatError(f"pairs mix question types: {sorted(qtypes)}")
    qtype = qtypes.pop() if qtypes else None
    version = "v2.0" if qtype == "yesno" else "v1.1"

    articles = {}
    for p in pairs:
        qa = {"id": p.pair_id, "question": p.question, "qtype": p.qtype}
        if p.qtype == "yesno":
            qa["answers"] = []
            qa["is_impossible"] = p.is_impossible
            qa["answer"] = p.yesno_label
        else:
            if training and not p.answers:
                raise SquadFormatError(f"pair {p.pair_id} has no answer in training mode")
            for a in p.answers:
                s = a["answer_start"]
                if p.context[s:s + len(a["text"])] != a["text"]:
                    raise SquadFormatError(f"pair {p.pair_id}: answer offset does not match context")
            qa["answers"] = [{"text": a["text"], "answer_start": a["answer_start"]} for a in p.answers]
        art = articles.setdefault(p.question_id, {"title": p.question_id, "paragraphs": []})
        art["paragraphs"].append({"context": p.context, "qas": [qa]})
    doc = {"version": version, "data": list(articles.values())}
    return json.dumps(doc, ensure_ascii=False, indent=indent)


def from_squad_json(document):
    """Inverse of :func:`to_squad_json`; also reads plain SQuAD files."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise SquadFormatError(f"malformed SQuAD JSON: {e.msg} (at char {e.pos})") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("data"), list):
        raise SquadFormatError("expected an object with a 'data' array")
    pairs = []
    for art in doc["data"]:
        qid = str(art.get("title", ""))
        for para in art.get("paragraphs", []):
            ctx = para["context"]
            for qa in para.get("qas", []):
                label = qa.get("answer")
                if label is None and "is_impossible" in qa and qa.get("qtype") == "yesno":
                    label = "no" if qa["is_impossible"] else "yes"
                qtype = qa.get("qtype") or ("yesno" if label in ("yes", "no") else "factoid")
                pairs.append(QAPair(
                    pair_id=str(qa["id"]),
                    question_id=qid or str(qa["id"]),
                    question=qa["question"],
                    context=ctx,
                    qtype=qtype,
                    answers=[{"text": a["text"], "answer_start": int(a["answer_start"])}
                             for a in qa.get("answers", [])],
                    yesno_label=label if qtype == "yesno" else None,
                ))
    return pairs


def load_squad(path):
    with open(path, encoding="utf-8") as f:
        return from_squad_json(f.read())
