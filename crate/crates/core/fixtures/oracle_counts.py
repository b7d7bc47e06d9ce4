"""Standalone word counter for corpus200.jsonl.

Writes expected_top50.json (term, total count) and expected_doc7.json
(term -> count for document art-007 over the top-50 vocabulary).
"""
import json
import re
from collections import Counter

SIBILANTS = ("s", "x", "z", "ch", "sh")


def normalize(word):
    w = word.lower()
    if w.endswith("ies"):
        w = w[:-3] + "y"
    elif w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("es") and len(w) - 2 >= 3 and w[:-2].endswith(SIBILANTS):
        w = w[:-2]
    elif w.endswith("s") and len(w) - 1 >= 3 and not w[:-1].endswith("s"):
        w = w[:-1]
    if w.endswith("ing") and len(w) - 3 >= 3:
        w = w[:-3]
    elif w.endswith("ed") and len(w) - 2 >= 3:
        w = w[:-2]
    return w


def tokens(text):
    return [t for t in (normalize(w) for w in re.split(r"[^0-9A-Za-z]+", text) if w) if len(t) >= 2]


docs = [json.loads(line) for line in open("corpus200.jsonl") if line.strip()]
total = Counter()
for d in docs:
    total.update(tokens(d["text"]))
top = sorted(total.items(), key=lambda kv: (-kv[1], kv[0]))[:50]
vocab = {t for t, _ in top}
doc7 = next(d for d in docs if d["id"] == "art-007")
counts = Counter(t for t in tokens(doc7["text"]) if t in vocab)

with open("expected_top50.json", "w") as f:
    f.write("[\n" + ",\n".join(json.dumps([t, c]) for t, c in top) + "\n]\n")
with open("expected_doc7.json", "w") as f:
    json.dump(dict(sorted(counts.items())), f, indent=1)
    f.write("\n")
