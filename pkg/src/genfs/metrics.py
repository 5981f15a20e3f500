"""Corpus metrics: token accuracy, BLEU, METEOR (exact-match only), ROUGE-1/2/L.

All scores are on a 0-100 scale. Strings are split with the basic tokenizer
so values do not depend on sub-word granularity.
"""
from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import ContractError
from .tokenization import basic_tokenize


def _tok(x) -> list[str]:
    return basic_tokenize(x) if isinstance(x, str) else list(x)


def _pairs(hyps, refs):
    if len(hyps) != len(refs):
        raise ContractError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    return [(_tok(h), _tok(r)) for h, r in zip(hyps, refs)]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def token_accuracy(hyps, refs) -> float:
    """Aligned-position matches over the longer length, averaged per pair."""
    pairs = _pairs(hyps, refs)
    if not pairs:
        raise ContractError("token accuracy of an empty corpus is undefined")
    total = 0.0
    for h, r in pairs:
        longest = max(len(h), len(r))
        if longest == 0:
            total += 1.0
            continue
        total += sum(a == b for a, b in zip(h, r)) / longest
    return 100.0 * total / len(pairs)


def bleu(hyps, refs, max_n: int = 4) -> float:
    """Corpus BLEU with brevity penalty.

    A zero clipped count for n >= 2 is smoothed to 1 / (total + 1); a zero
    unigram count gives BLEU 0.
    """
    pairs = _pairs(hyps, refs)
    hyp_len = sum(len(h) for h, _ in pairs)
    ref_len = sum(len(r) for _, r in pairs)
    if hyp_len == 0:
        warnings.warn("BLEU of an empty hypothesis corpus is 0")
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        clipped = total = 0
        for h, r in pairs:
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            clipped += sum(min(c, rc[g]) for g, c in hc.items())
            total += sum(hc.values())
        if clipped == 0:
            if n == 1:
                return 0.0
            p = 1.0 / (total + 1)
        else:
            p = clipped / total
        log_p += math.log(p) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def clipped_precision(hyp, ref, n: int) -> tuple[int, int]:
    hc, rc = _ngrams(_tok(hyp), n), _ngrams(_tok(ref), n)
    return sum(min(c, rc[g]) for g, c in hc.items()), sum(hc.values())


def _f1(overlap: int, n_hyp: int, n_ref: int) -> float:
    if overlap == 0:
        return 0.0
    p, r = overlap / n_hyp, overlap / n_ref
    return 2 * p * r / (p + r)


def rouge_n_pair(h: Sequence[str], r: Sequence[str], n: int) -> float:
    hc, rc = _ngrams(h, n), _ngrams(r, n)
    if not hc and not rc:
        # too short for any n-gram: score exact agreement of non-empty pairs
        return 1.0 if h and list(h) == list(r) else 0.0
    if not hc or not rc:
        return 0.0
    overlap = sum(min(c, rc[g]) for g, c in hc.items())
    return _f1(overlap, sum(hc.values()), sum(rc.values()))


def rouge_n(hyps, refs, n: int = 1) -> float:
    pairs = _pairs(hyps, refs)
    if not pairs:
        return 0.0
    return 100.0 * sum(rouge_n_pair(h, r, n) for h, r in pairs) / len(pairs)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(h, r) -> float:
    if not h or not r:
        return 0.0
    return _f1(lcs_length(h, r), len(h), len(r))


def rouge_l(hyps, refs) -> float:
    pairs = _pairs(hyps, refs)
    if not pairs:
        return 0.0
    return 100.0 * sum(rouge_l_pair(h, r) for h, r in pairs) / len(pairs)


def align_exact(h: Sequence[str], r: Sequence[str]) -> list[tuple[int, int]]:
    """Leftmost-greedy exact unigram alignment as (hyp position, ref position) pairs."""
    used = [False] * len(r)
    links = []
    for i, tok in enumerate(h):
        for j, other in enumerate(r):
            if not used[j] and other == tok:
                used[j] = True
                links.append((i, j))
                break
    return links


def count_chunks(links: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in sorted(links):
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_pair(h, r) -> float:
    links = align_exact(h, r)
    m = len(links)
    if m == 0:
        return 0.0
    p, rec = m / len(h), m / len(r)
    f_mean = 10 * p * rec / (rec + 9 * p)
    chunks = count_chunks(links)
    # one contiguous chunk counts as unfragmented, so identical pairs score exactly 1
    penalty = 0.0 if chunks == 1 else 0.5 * (chunks / m) ** 3
    return f_mean * (1 - penalty)


def meteor_lite(hyps, refs) -> float:
    pairs = _pairs(hyps, refs)
    if not pairs:
        return 0.0
    return 100.0 * sum(meteor_pair(h, r) for h, r in pairs) / len(pairs)


@dataclass
class MetricReport:
    acc: float
    bleu: float
    meteor: float
    rouge1: float
    rouge2: float
    rougeL: float
    size: int

    def to_text(self) -> str:
        return "".join(f"{k}={v:.4f}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        return cls(**{k: (int(v) if k == "size" else float(v)) for k, v in kv.items()})


def evaluate(hyps, refs) -> MetricReport:
    pairs = _pairs(hyps, refs)
    hs, rs = [h for h, _ in pairs], [r for _, r in pairs]
    return MetricReport(
        acc=token_accuracy(hs, rs),
        bleu=bleu(hs, rs),
        meteor=meteor_lite(hs, rs),
        rouge1=rouge_n(hs, rs, 1),
        rouge2=rouge_n(hs, rs, 2),
        rougeL=rouge_l(hs, rs),
        size=len(pairs),
    )
