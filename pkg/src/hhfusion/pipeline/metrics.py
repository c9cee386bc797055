"""Edit-distance error rates."""
from __future__ import annotations

from typing import Sequence

import numpy as np


def levenshtein(hyp: Sequence, ref: Sequence) -> int:
    """Unit-cost insert/delete/substitute distance between two sequences."""
    hyp, ref = list(hyp), list(ref)
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i]
        for j, r in enumerate(ref, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r)))
        prev = cur
    return prev[-1]


def token_error_rate(hyp: Sequence, ref: Sequence) -> float:
    """Edits divided by reference length; an empty reference counts every hypothesis token."""
    edits = levenshtein(hyp, ref)
    return edits / len(ref) if len(ref) else float(len(list(hyp)))


def corpus_error_rate(hyps, refs) -> float:
    """Total edits over total reference length."""
    edits = 0
    length = 0
    for h, r in zip(hyps, refs):
        edits += levenshtein(h, r)
        length += len(r)
    return edits / length if length else 0.0


def token_accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    pred, labels = np.asarray(pred), np.asarray(labels)
    return float(np.mean(pred == labels)) if labels.size else 0.0
