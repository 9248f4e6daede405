"""Synthetic corpora and numerical oracles shared by the tests."""

import json
import math

import numpy as np

GENES = ["brca1", "tp53", "egfr", "kras", "myc", "pten", "apc", "rb1", "vhl", "nf1",
         "braf", "jak2", "atm", "cdh1", "smad4", "stk11", "idh1", "ret", "kit", "alk"]
PROCESSES = ["apoptosis", "migration", "autophagy", "proliferation", "angiogenesis", "senescence"]
TISSUES = ["liver", "lung", "breast", "colon", "brain", "kidney", "skin"]
TEMPLATES = [
    "In {t} cells , {g} controls {p} while {d} is silent .",
    "{d} was studied , but {p} in {t} tissue is controlled by {g} .",
    "We show that {g} drives {p} of {t} cells , unlike {d} .",
    "The regulator of {p} in the {t} is {g} rather than {d} .",
]


def synthetic_factoid_entries(n=20):
    """BioASQ-shaped factoid questions, one snippet each, one gold mention each."""
    out = []
    for i in range(n):
        g = GENES[i % len(GENES)]
        d = GENES[(i + 7) % len(GENES)]
        p = PROCESSES[i % len(PROCESSES)]
        t = TISSUES[(i * 3) % len(TISSUES)]
        text = TEMPLATES[i % len(TEMPLATES)].format(g=g.upper(), d=d.upper(), p=p, t=t)
        out.append({
            "id": f"syn{i:03d}",
            "type": "factoid",
            "body": f"Which gene controls {p} in {t} cells?",
            "exact_answer": [g.upper()],
            "documents": [f"http://www.ncbi.nlm.nih.gov/pubmed/{1000 + i}"],
            "snippets": [{
                "text": text,
                "document": f"http://www.ncbi.nlm.nih.gov/pubmed/{1000 + i}",
                "offsetInBeginSection": 0,
                "offsetInEndSection": len(text),
                "beginSection": "abstract",
                "endSection": "abstract",
            }],
        })
    return out


def bioasq_doc(entries):
    return json.dumps({"questions": entries})


def central_difference(f, arr, idx, h=1e-5):
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


# -- straight-line scalar encoder used as an independent oracle ---------------

def _ln(vec, g, b, eps=1e-12):
    mu = sum(vec) / len(vec)
    var = sum((x - mu) ** 2 for x in vec) / len(vec)
    r = 1.0 / math.sqrt(var + eps)
    return [(x - mu) * r * g[i] + b[i] for i, x in enumerate(vec)]


def _matvec(x, W, bias):
    # x @ W + b with W shaped (in, out)
    return [sum(x[i] * W[i][j] for i in range(len(x))) + bias[j] for j in range(len(bias))]


def scalar_encoder(arrays, n_layers, n_heads, input_ids, segment_ids, n_valid):
    """Pure-Python forward pass over lists; mirrors the vectorised encoder."""
    A = {k: np.asarray(v).tolist() for k, v in arrays.items()}
    L = len(input_ids)
    H = len(A["embeddings.ln.gamma"])
    dh = H // n_heads
    h = []
    for pos in range(L):
        x = [A["embeddings.token"][input_ids[pos]][j] + A["embeddings.segment"][segment_ids[pos]][j]
             + A["embeddings.position"][pos][j] for j in range(H)]
        h.append(_ln(x, A["embeddings.ln.gamma"], A["embeddings.ln.beta"]))
    for layer in range(n_layers):
        p = f"layer.{layer}."
        q = [_matvec(r, A[p + "attention.query.weight"], A[p + "attention.query.bias"]) for r in h]
        k = [_matvec(r, A[p + "attention.key.weight"], A[p + "attention.key.bias"]) for r in h]
        v = [_matvec(r, A[p + "attention.value.weight"], A[p + "attention.value.bias"]) for r in h]
        ctx = [[0.0] * H for _ in range(L)]
        for head in range(n_heads):
            sl = range(head * dh, (head + 1) * dh)
            for i in range(L):
                scores = [sum(q[i][c] * k[j][c] for c in sl) / math.sqrt(dh) for j in range(n_valid)]
                m = max(scores)
                w = [math.exp(s - m) for s in scores]
                z = sum(w)
                for c in sl:
                    ctx[i][c] = sum(w[j] / z * v[j][c] for j in range(n_valid))
        o = [_matvec(r, A[p + "attention.output.weight"], A[p + "attention.output.bias"]) for r in ctx]
        h1 = [_ln([a + b for a, b in zip(h[i], o[i])], A[p + "attention.ln.gamma"], A[p + "attention.ln.beta"])
              for i in range(L)]
        out = []
        for i in range(L):
            u = _matvec(h1[i], A[p + "ffn.in.weight"], A[p + "ffn.in.bias"])
            g = [0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0))) for x in u]
            f = _matvec(g, A[p + "ffn.out.weight"], A[p + "ffn.out.bias"])
            out.append(_ln([a + b for a, b in zip(h1[i], f)], A[p + "ffn.ln.gamma"], A[p + "ffn.ln.beta"]))
        h = out
    return h


def synthetic_features(n=20, max_seq_len=40, doc_stride=8):
    """Supervised factoid windows for the synthetic corpus: ``(batch, featurizer, questions)``."""
    from bioqa.estimators import QAFeaturizer
    from bioqa.ingest import StrategyConfig, build_pairs, parse_bioasq

    questions = parse_bioasq(bioasq_doc(synthetic_factoid_entries(n)))
    pairs = [p for q in questions for p in build_pairs(q, StrategyConfig())]
    fz = QAFeaturizer(max_seq_len=max_seq_len, doc_stride=doc_stride, mode="train")
    return fz.fit_transform(pairs), fz, questions
