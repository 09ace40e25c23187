#!/usr/bin/env python3
"""Writes ctfidf_toy.json: a three-class toy corpus with its class-term counts
and c-TF-IDF weights worked out term by term (plain and square-root tf).

Tokens: lowercase runs of ASCII letters/digits, length >= 2. The last
document is noise (label -1): its words join the vocabulary but no class.
"""
import json
import math
import re
from pathlib import Path

DOCS = [
    ("River water quality and water supply", 0),
    ("Groundwater supply for rural water users", 0),
    ("Solar power and wind power for rural grids", 1),
    ("Battery storage stabilises solar grids", 1),
    ("Rural schools improve literacy", 2),
    ("Teacher training improves literacy and schools", 2),
    ("Unrelated noise about cooking", -1),
]


def tokens(text):
    return [t for t in re.findall(r"[a-z0-9]+", text.lower()) if len(t) >= 2]


def main():
    vocab = sorted({t for text, _ in DOCS for t in tokens(text)})
    n_classes = 1 + max(label for _, label in DOCS)
    counts = [[0] * len(vocab) for _ in range(n_classes)]
    for text, label in DOCS:
        if label < 0:
            continue
        for t in tokens(text):
            counts[label][vocab.index(t)] += 1

    class_total = [sum(row) for row in counts]
    term_total = [sum(counts[c][j] for c in range(n_classes)) for j in range(len(vocab))]
    avg = sum(class_total) / n_classes

    def weights(reduce):
        out = []
        for c in range(n_classes):
            row = []
            for j in range(len(vocab)):
                if counts[c][j] == 0:
                    row.append(0.0)
                    continue
                tf = counts[c][j] / class_total[c]
                if reduce:
                    tf = math.sqrt(tf)
                row.append(tf * math.log(1 + avg / term_total[j]))
            out.append(row)
        return out

    fixture = {
        "documents": [text for text, _ in DOCS],
        "labels": [label for _, label in DOCS],
        "terms": vocab,
        "class_counts": counts,
        "class_totals": class_total,
        "average_class_total": avg,
        "weights_sqrt": weights(True),
        "weights_plain": weights(False),
    }
    out = Path(__file__).resolve().parent / "ctfidf_toy.json"
    out.write_text(json.dumps(fixture, indent=1) + "\n")


if __name__ == "__main__":
    main()
