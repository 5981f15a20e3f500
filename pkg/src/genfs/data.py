"""Parallel-corpus ingestion and the synthetic corpora used for desk-scale checks."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .tokenization import normalize_text

log = logging.getLogger(__name__)

LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class DatasetRecord:
    src: str
    tgt: str


@dataclass
class Split:
    train: list[DatasetRecord]
    val: list[DatasetRecord]
    test: list[DatasetRecord]


def read_jsonl(path) -> list[DatasetRecord]:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise FormatError(f"{path}:{lineno}: expected an object with 'src' and 'tgt'")
            for key in ("src", "tgt"):
                if key not in obj:
                    raise FormatError(f"{path}:{lineno}: missing field {key!r}")
                if not isinstance(obj[key], str):
                    raise FormatError(f"{path}:{lineno}: field {key!r} must be a string")
            src, tgt = normalize_text(obj["src"]), normalize_text(obj["tgt"])
            if not src or not tgt:
                raise FormatError(f"{path}:{lineno}: empty 'src' or 'tgt' after whitespace normalisation")
            records.append(DatasetRecord(src, tgt))
    if not records:
        raise FormatError(f"{path}: no records")
    return records


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"src": r.src, "tgt": r.tgt}, ensure_ascii=False) + "\n")


def split_records(records, seed: int = 0, val_fraction: float = 0.1, test_fraction: float = 0.1) -> Split:
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise ConfigError("split fractions must be non-negative and sum below 1")
    order = np.random.default_rng(seed).permutation(len(records))
    shuffled = [records[i] for i in order]
    n_val = int(round(val_fraction * len(records)))
    n_test = int(round(test_fraction * len(records)))
    n_train = len(records) - n_val - n_test
    return Split(shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:])


def ingest(path, seed: int = 0, val_fraction: float = 0.1, test_fraction: float = 0.1) -> Split:
    return split_records(read_jsonl(path), seed, val_fraction, test_fraction)


# ---------------------------------------------------------------------------
# Synthetic corpora


def copy_task(n: int, vocab: int = 20, max_len: int = 10, seed: int = 0, min_len: int = 1) -> list[DatasetRecord]:
    """Sentences of single-letter words; the target repeats the source."""
    if vocab > len(LETTERS):
        raise ConfigError(f"copy task supports at most {len(LETTERS)} symbols")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        words = rng.choice(list(LETTERS[:vocab]), size=rng.integers(min_len, max_len + 1))
        text = " ".join(words)
        out.append(DatasetRecord(text, text))
    return out


def syllable_words(n: int, seed: int = 0, syllables: int = 20) -> list[str]:
    """Distinct pseudo-words built from a small syllable inventory."""
    rng = np.random.default_rng(seed)
    consonants, vowels = "bdfgklmnprst", "aeiou"
    inventory = sorted({c + v for c in consonants for v in vowels})
    inventory = [inventory[i] for i in rng.permutation(len(inventory))[:syllables]]
    k = len(inventory)
    if n > k + k ** 2 + k ** 3:
        raise ConfigError(f"{k} syllables yield at most {k + k ** 2 + k ** 3} distinct words, {n} requested")
    words, seen = [], set()
    while len(words) < n:
        w = "".join(rng.choice(inventory, size=rng.integers(1, 4)))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def zipf_sampler(words, exponent: float = 1.0, seed: int = 0):
    ranks = np.arange(1, len(words) + 1, dtype=np.float64)
    p = ranks ** -exponent
    p /= p.sum()
    rng = np.random.default_rng(seed)
    return lambda size: [words[i] for i in rng.choice(len(words), size=size, p=p)]


def zipf_corpus(n_sentences: int, n_words: int = 5000, exponent: float = 1.0, seed: int = 0,
                min_len: int = 4, max_len: int = 14) -> list[str]:
    rng = np.random.default_rng(seed + 1)
    sample = zipf_sampler(syllable_words(n_words, seed), exponent, seed + 2)
    return [" ".join(sample(int(rng.integers(min_len, max_len + 1)))) for _ in range(n_sentences)]


def regime_task(n: int, seed: int = 0, vocab=None, short=(3, 8), long=(16, 22)) -> list[DatasetRecord]:
    """Short sources are reversed, long sources are copied; lengths never overlap."""
    rng = np.random.default_rng(seed)
    if vocab is None:
        vocab = list(LETTERS[:4])
    sample = vocab if callable(vocab) else (lambda size: list(rng.choice(vocab, size=size)))
    out = []
    for i in range(n):
        if i % 2 == 0:
            words = sample(int(rng.integers(short[0], short[1] + 1)))
            tgt = words[::-1]
        else:
            words = sample(int(rng.integers(long[0], long[1] + 1)))
            tgt = words
        out.append(DatasetRecord(" ".join(words), " ".join(tgt)))
    return out


def zipf_regime_task(n: int, seed: int = 0, vocab_seed: int = 0, n_words: int = 400, exponent: float = 1.1,
                     **kw) -> list[DatasetRecord]:
    """Regime corpus whose words follow a Zipf law over a fixed pseudo-word list.

    Splits drawn with different ``seed`` but the same ``vocab_seed`` share the
    word list and its frequency ranking.
    """
    words = syllable_words(n_words, seed=vocab_seed)
    return regime_task(n, seed=seed, vocab=zipf_sampler(words, exponent, seed=2000 + seed), **kw)
