"""Word-level quality metrics: edit distance, WER, corpus BLEU, resegmentation."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

import numpy as np

from ..core import Token

Sentences = Sequence[Sequence[Token]]


def edit_distance(a: Sequence[Token], b: Sequence[Token]) -> int:
    """Levenshtein distance over words (unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def wer(hyps: Sentences, refs: Sentences) -> float | None:
    """Case-sensitive corpus WER: total edits over total reference words.

    Returns None for an empty reference.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypothesis vs {len(refs)} reference sentences")
    n_ref = sum(len(r) for r in refs)
    if n_ref == 0:
        return None
    return sum(edit_distance(h, r) for h, r in zip(hyps, refs)) / n_ref


def _ngrams(words: Sequence[Token], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu(hyps: Sentences, refs: Sentences, max_order: int = 4) -> float | None:
    """Corpus BLEU in [0, 100] with brevity penalty and no smoothing."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypothesis vs {len(refs)} reference sentences")
    ref_len = sum(len(r) for r in refs)
    if ref_len == 0:
        return None
    hyp_len = sum(len(h) for h in hyps)
    if hyp_len == 0:
        return 0.0
    matches = [0] * max_order
    totals = [0] * max_order
    for h, r in zip(hyps, refs):
        for n in range(1, max_order + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(0, len(h) - n + 1)
    if min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_order
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def resegment(hyp: Sequence[Token], refs: Sentences) -> list[list[Token]]:
    """Cut a hypothesis word stream into ``len(refs)`` sentences minimising the
    summed word edit distance to the reference sentences.

    Solved as one Levenshtein alignment against the concatenated references;
    the cut points are where the optimal path crosses sentence boundaries.
    Insertions sitting exactly on a boundary go to the later sentence, which
    places the cut as early as possible.
    """
    if not refs:
        raise ValueError("resegment needs a nonempty reference")
    hyp = list(hyp)
    k_sent = len(refs)
    if not hyp:
        return [[] for _ in range(k_sent)]
    flat: list[Token] = []
    owner: list[int] = []  # sentence index of each reference word
    start_row: list[int] = []
    for k, r in enumerate(refs):
        start_row.append(len(flat))
        flat.extend(r)
        owner.extend([k] * len(r))

    vocab: dict[Token, int] = {}
    h = np.array([vocab.setdefault(w, len(vocab)) for w in hyp], dtype=np.int64)
    n, rows = len(hyp), len(flat)
    dist = np.empty((rows + 1, n + 1), dtype=np.int64)
    dist[0] = np.arange(n + 1)
    js = np.arange(n + 1)
    for r in range(1, rows + 1):
        code = vocab.get(flat[r - 1], -1)
        prev = dist[r - 1]
        t = np.empty(n + 1, dtype=np.int64)
        t[0] = r
        t[1:] = np.minimum(prev[1:] + 1, prev[:-1] + (h != code))
        dist[r] = js + np.minimum.accumulate(t - js)

    first_at_row: dict[int, int] = {}
    for k, row in enumerate(start_row):
        first_at_row.setdefault(row, k)

    out: list[list[Token]] = [[] for _ in range(k_sent)]
    r, j = rows, n
    while j > 0:
        d = dist[r, j]
        if r > 0 and d == dist[r - 1, j - 1] + (flat[r - 1] != hyp[j - 1]):
            out[owner[r - 1]].append(hyp[j - 1])
            r, j = r - 1, j - 1
        elif r > 0 and d == dist[r - 1, j] + 1:
            r -= 1
        else:
            k = first_at_row.get(r, owner[r - 1] if r > 0 else 0)
            out[k].append(hyp[j - 1])
            j -= 1
    for seg in out:
        seg.reverse()
    return out


def segmentation_cost(segments: Sentences, refs: Sentences) -> int:
    return sum(edit_distance(s, r) for s, r in zip(segments, refs))
