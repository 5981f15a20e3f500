"""Independent brute-force references for the metric implementations."""
import itertools
import math
from functools import lru_cache


def ngram_list(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def clipped_counts(hyp, ref, n):
    """Scan-and-strike clipping: each hyp n-gram consumes one matching ref n-gram if any is left."""
    pool = ngram_list(ref, n)
    hits = 0
    for g in ngram_list(hyp, n):
        if g in pool:
            pool.remove(g)
            hits += 1
    return hits, len(ngram_list(hyp, n))


def f1(overlap, a, b):
    if overlap == 0:
        return 0.0
    p, r = overlap / a, overlap / b
    return 2 * p * r / (p + r)


def rouge_n(hyp, ref, n):
    h, r = ngram_list(hyp, n), ngram_list(ref, n)
    if not h and not r:
        return 1.0 if hyp and list(hyp) == list(ref) else 0.0
    if not h or not r:
        return 0.0
    overlap, _ = clipped_counts(hyp, ref, n)
    return f1(overlap, len(h), len(r))


def lcs(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def rouge_l(hyp, ref):
    if not hyp or not ref:
        return 0.0
    return f1(lcs(hyp, ref), len(hyp), len(ref))


def all_alignments(hyp, ref):
    """Every maximum-cardinality exact unigram alignment, as sorted (hyp, ref) pair lists."""
    per_type = []
    for tok in sorted(set(hyp) & set(ref)):
        hs = [i for i, t in enumerate(hyp) if t == tok]
        rs = [j for j, t in enumerate(ref) if t == tok]
        k = min(len(hs), len(rs))
        options = []
        for hsub in itertools.combinations(hs, k):
            for rperm in itertools.permutations(rs, k):
                options.append(list(zip(hsub, rperm)))
        per_type.append(options)
    for combo in itertools.product(*per_type):
        yield sorted(p for part in combo for p in part)


def leftmost_alignment(hyp, ref):
    """The maximum alignment whose ref positions, read in hyp order, are lexicographically smallest."""
    def key(al):
        pos = dict(al)
        return tuple(pos.get(i, math.inf) for i in range(len(hyp)))
    return min(all_alignments(hyp, ref), key=key, default=[])


def chunks(al):
    n = 0
    for k, (i, j) in enumerate(al):
        if k == 0 or (i, j) != (al[k - 1][0] + 1, al[k - 1][1] + 1):
            n += 1
    return n


def meteor(hyp, ref):
    al = leftmost_alignment(hyp, ref)
    m = len(al)
    if m == 0:
        return 0.0
    p, r = m / len(hyp), m / len(ref)
    fmean = 10 * p * r / (r + 9 * p)
    c = chunks(al)
    pen = 0.0 if c == 1 else 0.5 * (c / m) ** 3
    return fmean * (1 - pen)


def bleu(hyps, refs, max_n=4):
    hl = sum(len(h) for h in hyps)
    rl = sum(len(r) for r in refs)
    if hl == 0:
        return 0.0
    logs = []
    for n in range(1, max_n + 1):
        hit = tot = 0
        for h, r in zip(hyps, refs):
            a, b = clipped_counts(h, r, n)
            hit += a
            tot += b
        if hit == 0:
            if n == 1:
                return 0.0
            logs.append(math.log(1 / (tot + 1)))
        else:
            logs.append(math.log(hit / tot))
    bp = 1.0 if hl > rl else math.exp(1 - rl / hl)
    return 100 * bp * math.exp(sum(logs) / max_n)


def accuracy(hyps, refs):
    total = 0.0
    for h, r in zip(hyps, refs):
        longest = max(len(h), len(r))
        total += 1.0 if longest == 0 else sum(h[i] == r[i] for i in range(min(len(h), len(r)))) / longest
    return 100 * total / len(hyps)


def random_pairs(rng, n, max_len=12, vocab="abcdefgh"):
    out = []
    for _ in range(n):
        h = [vocab[i] for i in rng.integers(0, len(vocab), rng.integers(1, max_len + 1))]
        r = [vocab[i] for i in rng.integers(0, len(vocab), rng.integers(1, max_len + 1))]
        out.append((h, r))
    return out
