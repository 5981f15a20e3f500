"""Basic and multi-scale fuzzy tokenization, vocabulary, and Zipf statistics.

The fuzzy tokenizer is itself a small rule base: each rule pairs a delegate
token (antecedent) with a BPE model of a given merge budget (consequent).
A word is segmented by the model of the rule whose delegate it most
resembles under cosine similarity of token features.
"""
from __future__ import annotations

import heapq
import math
import unicodedata
import zlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import fuzzy
from .errors import ConfigError, FormatError, StateError

MARKER = "@@"
PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)
PAD, BOS, EOS, UNK = range(4)

DEFAULT_MERGES = (256, 2048, 8192)
FEATURE_WEIGHTS = (1.0, 0.5, 0.5)
BIGRAM_DIMS = 256


# ---------------------------------------------------------------------------
# Basic tokenizer


def normalize_text(text: str) -> str:
    return " ".join(unicodedata.normalize("NFC", text).split())


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def is_punct_token(token: str) -> bool:
    return bool(token) and all(_is_punct(c) for c in token)


def basic_tokenize(text: str) -> list[str]:
    """Split on whitespace; every maximal run of punctuation is its own token."""
    tokens = []
    for chunk in normalize_text(text).split(" "):
        if not chunk:
            continue
        start = 0
        for i in range(1, len(chunk) + 1):
            if i == len(chunk) or _is_punct(chunk[i]) != _is_punct(chunk[start]):
                tokens.append(chunk[start:i])
                start = i
    return tokens


def join_subwords(tokens: Sequence[str], marker: str = MARKER) -> list[str]:
    """Undo sub-word slicing: a token ending in the marker glues onto the next one."""
    words, buf = [], ""
    for tok in tokens:
        if tok.endswith(marker) and len(tok) > len(marker):
            buf += tok[: -len(marker)]
        else:
            words.append(buf + tok)
            buf = ""
    if buf:
        words.append(buf)
    return words


def detokenize(tokens: Sequence[str], marker: str = MARKER) -> str:
    """Single space between words, none before a punctuation token."""
    out = ""
    for word in join_subwords(tokens, marker):
        if out and not is_punct_token(word):
            out += " "
        out += word
    return out


# ---------------------------------------------------------------------------
# Byte-pair encoding


@dataclass
class SubwordModel:
    scale_id: int
    merge_list: list[tuple[str, str]]
    continuation_marker: str = MARKER
    _ranks: dict = field(default=None, init=False, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def merge_count(self) -> int:
        return len(self.merge_list)

    def segment(self, word: str) -> list[str]:
        """Sub-word pieces of ``word`` without continuation markers."""
        if word in self._cache:
            return self._cache[word]
        if self._ranks is None:
            self._ranks = {pair: i for i, pair in enumerate(self.merge_list)}
        symbols = list(word)
        while len(symbols) > 1:
            ranked = [(self._ranks.get(p, math.inf), i) for i, p in enumerate(zip(symbols, symbols[1:]))]
            best = min(ranked)[0]
            if best == math.inf:
                break
            symbols = _merge_symbols(symbols, self.merge_list[best])
        self._cache[word] = symbols
        return symbols

    def apply(self, word: str) -> list[str]:
        pieces = self.segment(word)
        return [p + self.continuation_marker for p in pieces[:-1]] + pieces[-1:]


def _merge_symbols(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    a, b = pair
    out, i = [], 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def apply_bpe(model: SubwordModel, word: str) -> list[str]:
    return model.apply(word)


def train_bpe(corpus: Iterable[Sequence[str]] | Counter, merges: int, scale_id: int = 0,
              marker: str = MARKER) -> SubwordModel:
    """Greedy most-frequent-pair merging over character-initialised words.

    Ties on the count go to the lexicographically smallest pair. Training stops
    early once no adjacent pair remains.
    """
    if merges < 0:
        raise ConfigError("merge count must be non-negative")
    counts = corpus if isinstance(corpus, Counter) else Counter(t for seq in corpus for t in seq)
    words = sorted(counts)
    freqs = [counts[w] for w in words]
    symbols = [list(w) for w in words]

    pair_count: dict[tuple, int] = defaultdict(int)
    where: dict[tuple, set] = defaultdict(set)
    for idx, syms in enumerate(symbols):
        for p in zip(syms, syms[1:]):
            pair_count[p] += freqs[idx]
            where[p].add(idx)
    heap = [(-c, p) for p, c in pair_count.items()]
    heapq.heapify(heap)

    merge_list = []
    while len(merge_list) < merges and heap:
        neg, pair = heapq.heappop(heap)
        if pair_count.get(pair, 0) != -neg or neg == 0:
            continue
        merge_list.append(pair)
        touched = set()
        for idx in sorted(where.pop(pair, ())):
            old = symbols[idx]
            new = _merge_symbols(old, pair)
            if new == old:
                continue
            f = freqs[idx]
            for p in zip(old, old[1:]):
                pair_count[p] -= f
                touched.add(p)
            for p in zip(new, new[1:]):
                pair_count[p] += f
                where[p].add(idx)
                touched.add(p)
            symbols[idx] = new
        pair_count.pop(pair, None)
        for p in touched:
            c = pair_count.get(p, 0)
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                pair_count.pop(p, None)
                where.pop(p, None)
    return SubwordModel(scale_id, merge_list, marker)


# ---------------------------------------------------------------------------
# Token features


@dataclass
class FeatureSpace:
    """Maps a token to [bigram block, length block, log-frequency block]."""

    counts: Counter
    max_len: int
    max_logfreq: float
    dims: int = BIGRAM_DIMS
    weights: tuple = FEATURE_WEIGHTS

    @classmethod
    def from_counts(cls, counts: Counter, dims: int = BIGRAM_DIMS, weights=FEATURE_WEIGHTS):
        max_len = max((len(w) for w in counts), default=1)
        max_logfreq = max((math.log1p(c) for c in counts.values()), default=1.0)
        return cls(Counter(counts), max(max_len, 1), max_logfreq or 1.0, dims, tuple(weights))

    def bigram_counts(self, token: str) -> np.ndarray:
        vec = np.zeros(self.dims)
        if not token:
            return vec
        padded = "^" + token + "$"
        for a, b in zip(padded, padded[1:]):
            vec[zlib.crc32((a + b).encode("utf-8")) % self.dims] += 1
        return vec

    def feature(self, token: str) -> np.ndarray:
        if not token:
            return np.zeros(self.dims + 2)
        bg = self.bigram_counts(token)
        bg = bg / np.linalg.norm(bg)
        length = len(token) / self.max_len
        logfreq = math.log1p(self.counts.get(token, 0)) / self.max_logfreq
        w_bg, w_len, w_freq = self.weights
        return np.concatenate([w_bg * bg, [w_len * length], [w_freq * logfreq]])


# ---------------------------------------------------------------------------
# Fuzzy tokenizer


class FuzzyTokenizer:
    def __init__(self, models: Sequence[SubwordModel] = (), delegates: Sequence[fuzzy.Delegate] = (),
                 delegate_tokens: Sequence[str] = (), space: FeatureSpace | None = None,
                 marker: str = MARKER):
        self.models = list(models)
        self.delegates = list(delegates)
        self.delegate_tokens = list(delegate_tokens)
        self.space = space
        self.marker = marker
        self._route_cache: dict[str, int] = {}

    @property
    def fitted(self) -> bool:
        return bool(self.models) and len(self.models) == len(self.delegates) and self.space is not None

    @property
    def K(self) -> int:
        return len(self.models)

    @classmethod
    def fit(cls, corpus: Iterable[Sequence[str]], merges: Sequence[int] = DEFAULT_MERGES, seed: int = 0,
            override: Sequence[str] | None = None) -> "FuzzyTokenizer":
        """Train one BPE model per merge budget and elect one delegate token per scale.

        Scales are ordered by merge budget. Delegates are paired with scales by
        corpus frequency: the rarest delegate drives the scale with the fewest
        merges, so rare words are cut into pieces that recur elsewhere.
        """
        counts = Counter(t for seq in corpus for t in seq)
        if not counts:
            raise ConfigError("cannot fit a tokenizer on an empty corpus")
        merges = sorted(merges)
        models = [train_bpe(counts, m, scale_id=k) for k, m in enumerate(merges)]
        space = FeatureSpace.from_counts(counts)
        distinct = sorted(counts)
        K = len(models)
        if len(distinct) < K:
            raise ConfigError(f"{K} tokenizer scales need at least {K} distinct words, corpus has {len(distinct)}")
        if override is not None:
            ids = [distinct.index(t) for t in override]
        else:
            feats = np.stack([space.feature(t) for t in distinct])
            ids = [d.source_id for d in fuzzy.elect_delegates(feats, K, seed=seed)]
        if override is None:
            ids = sorted(ids, key=lambda i: (counts[distinct[i]], distinct[i]))
        tokens = [distinct[i] for i in ids]
        delegates = [fuzzy.Delegate(space.feature(t), i, k) for k, (t, i) in enumerate(zip(tokens, ids))]
        return cls(models, delegates, tokens, space)

    @classmethod
    def single_scale(cls, corpus: Iterable[Sequence[str]], merges: int) -> "FuzzyTokenizer":
        return cls.fit(corpus, merges=(merges,))

    def route(self, word: str) -> int:
        if word not in self._route_cache:
            self._route_cache[word] = fuzzy.fire_strengths(self.space.feature(word), self.delegates).winner
        return self._route_cache[word]

    def tokenize_word(self, word: str) -> list[str]:
        if not self.fitted:
            raise StateError("fuzzy tokenizer has not been fitted")
        return self.models[self.route(word)].apply(word)

    def tokenize(self, text: str) -> list[str]:
        if not self.fitted:
            raise StateError("fuzzy tokenizer has not been fitted")
        out = []
        for word in basic_tokenize(text):
            out.extend(self.tokenize_word(word))
        return out

    def detokenize(self, tokens: Sequence[str]) -> str:
        return detokenize(tokens, self.marker)

    # -- persistence -------------------------------------------------------
    def dumps(self) -> str:
        if not self.fitted:
            raise StateError("cannot serialise an unfitted tokenizer")
        sp = self.space
        lines = [f"genfs-tok v1 K={self.K}", f"marker {self.marker}",
                 f"features dims={sp.dims} max_len={sp.max_len} max_logfreq={sp.max_logfreq!r} "
                 f"weights={','.join(repr(float(w)) for w in sp.weights)}"]
        for model in self.models:
            lines.append(f"scale {model.scale_id} merges {model.merge_count}")
            lines.extend(f"{a} {b}" for a, b in model.merge_list)
        lines.append(f"delegates {len(self.delegates)}")
        for d, tok in zip(self.delegates, self.delegate_tokens):
            lines.append(f"delegate {d.rule_index} source {d.source_id} token {tok}")
        lines.append(f"counts {len(sp.counts)}")
        lines.extend(f"{w} {c}" for w, c in sorted(sp.counts.items()))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "FuzzyTokenizer":
        lines = text.split("\n")
        pos = 0

        def take() -> list[str]:
            nonlocal pos
            if pos >= len(lines):
                raise FormatError("tokenizer model ended early")
            pos += 1
            return lines[pos - 1].split(" ")

        head = take()
        if head[:2] != ["genfs-tok", "v1"] or not head[2].startswith("K="):
            raise FormatError(f"unsupported tokenizer header {' '.join(head)!r}")
        K = int(head[2][2:])
        marker = take()[1]
        feat = dict(kv.split("=", 1) for kv in take()[1:])
        models = []
        for _ in range(K):
            tag, sid, _, m = take()
            if tag != "scale":
                raise FormatError("expected a 'scale' section")
            models.append(SubwordModel(int(sid), [tuple(take()) for _ in range(int(m))], marker))
        n_dlg = int(take()[1])
        dlg_meta = []
        for _ in range(n_dlg):
            parts = take()
            dlg_meta.append((int(parts[1]), int(parts[3]), " ".join(parts[5:])))
        n_counts = int(take()[1])
        counts = Counter()
        for _ in range(n_counts):
            w, c = take()
            counts[w] = int(c)
        space = FeatureSpace(counts, int(feat["max_len"]), float(feat["max_logfreq"]), int(feat["dims"]),
                             tuple(float(w) for w in feat["weights"].split(",")))
        delegates = [fuzzy.Delegate(space.feature(tok), sid, k) for k, sid, tok in dlg_meta]
        return cls(models, delegates, [tok for _, _, tok in dlg_meta], space, marker)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "FuzzyTokenizer":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def fuzzy_tokenize_word(word: str, delegates, models: Sequence[SubwordModel], space: FeatureSpace) -> list[str]:
    """Functional form: route ``word`` by fire strength and slice it with the winning model."""
    winner = fuzzy.fire_strengths(space.feature(word), delegates).winner
    return models[winner].apply(word)


def fuzzy_tokenize_sequence(text: str, tokenizer: FuzzyTokenizer) -> list[str]:
    return tokenizer.tokenize(text)


# ---------------------------------------------------------------------------
# Vocabulary


class Vocabulary:
    def __init__(self, tokens: Sequence[str] = ()):
        self.index_to_token = list(RESERVED)
        self.token_to_index = {t: i for i, t in enumerate(RESERVED)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.token_to_index:
            self.token_to_index[token] = len(self.index_to_token)
            self.index_to_token.append(token)
        return self.token_to_index[token]

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]]) -> "Vocabulary":
        counts = Counter(t for seq in sequences for t in seq)
        return cls(sorted(counts, key=lambda t: (-counts[t], t)))

    def __len__(self):
        return len(self.index_to_token)

    @property
    def size(self) -> int:
        return len(self)

    def w2v(self, tokens: Sequence[str]) -> list[int]:
        return [self.token_to_index.get(t, UNK) for t in tokens]

    def v2w(self, indices: Sequence[int]) -> list[str]:
        n = len(self)
        out = []
        for i in indices:
            i = int(i)
            if not 0 <= i < n:
                raise IndexError(f"index {i} outside vocabulary of size {n}")
            out.append(self.index_to_token[i])
        return out

    def dumps(self) -> str:
        return "\n".join(self.index_to_token) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:4]) != RESERVED:
            raise FormatError("vocabulary must start with the four reserved markers")
        return cls(lines[4:])


def w2v(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    return vocab.w2v(tokens)


def v2w(indices: Sequence[int], vocab: Vocabulary) -> list[str]:
    return vocab.v2w(indices)


# ---------------------------------------------------------------------------
# Zipf statistics


@dataclass
class ZipfStats:
    rank_frequency_table: list[tuple[int, int]]
    fitted_C: float
    fitted_exponent: float
    tokens: list[str] = field(repr=False, default_factory=list)

    def low_freq_fraction(self, threshold: int) -> float:
        freqs = [f for _, f in self.rank_frequency_table]
        return sum(f < threshold for f in freqs) / len(freqs)


def zipf_stats(tokens: Iterable[str]) -> ZipfStats:
    """Rank-frequency table and a least-squares fit of ln f = ln C - s ln n."""
    counts = Counter(tokens)
    if not counts:
        raise ConfigError("zipf statistics need a non-empty corpus")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    table = [(rank, f) for rank, (_, f) in enumerate(ordered, 1)]
    ranks = np.array([r for r, _ in table], dtype=np.float64)
    freqs = np.array([f for _, f in table], dtype=np.float64)
    if len(table) == 1:
        return ZipfStats(table, float(freqs[0]), 1.0, [t for t, _ in ordered])
    slope, intercept = np.polyfit(-np.log(ranks), np.log(freqs), 1)
    return ZipfStats(table, float(np.exp(intercept)), float(slope), [t for t, _ in ordered])
