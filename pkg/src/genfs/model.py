"""FuzzyS2S: fuzzy tokenizer preprocessing, K transformer rule consequents fused by
normalised fire strengths, and greedy postprocessing."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Sequence

import numpy as np

from . import fuzzy
from . import numerics as nx
from .data import DatasetRecord
from .errors import ConfigError, StateError
from .tokenization import (BOS, EOS, PAD, FuzzyTokenizer, Vocabulary, basic_tokenize,
                           detokenize)
from .transformer import TransformerConfig, TransformerConsequent, pad_batch

log = logging.getLogger(__name__)

LENGTH_WEIGHT = 0.5
LR_SCHEDULES = ("constant", "linear", "exponential")
FINAL_LR_FRACTION = 0.01


def scheduled_lr(base: float, schedule: str, step: int, total_steps: int) -> float:
    """Learning rate for optimiser step ``step`` (0-based) out of ``total_steps``."""
    frac = step / max(total_steps, 1)
    if schedule == "linear":
        return base * (1.0 - step / (total_steps + 1))
    if schedule == "exponential":
        return base * FINAL_LR_FRACTION ** frac
    return base


@dataclass
class TrainConfig:
    dataset: str = ""
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_schedule: str = "exponential"
    gamma: float = 1e-6
    clip_norm: float = 1.0
    rules: int = 3
    seed: int = 0
    max_len: int = 64
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    dropout: float = 0.1
    init: str = "xavier"
    fuzzy_tokenizer: bool = True
    tokenizer_merges: tuple = (256, 2048, 8192)

    def __post_init__(self):
        self.tokenizer_merges = tuple(int(m) for m in self.tokenizer_merges)
        for name in ("epochs", "batch_size", "rules", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.clip_norm < 0:
            raise ConfigError("clip_norm must be >= 0 (0 disables clipping)")
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        if not self.tokenizer_merges:
            raise ConfigError("at least one tokenizer scale is required")

    def transformer_config(self, vocab_size: int) -> TransformerConfig:
        return TransformerConfig(vocab_size=vocab_size, d_model=self.d_model, n_heads=self.n_heads,
                                 n_layers=self.n_layers, d_ff=self.d_ff, dropout=self.dropout,
                                 max_len=self.max_len, init=self.init)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


VARIANTS = {
    "full": frozenset(),
    "no-tokenizer": frozenset({"fuzzy_tokenizer"}),
    "no-genfs": frozenset({"fuzzy_tokenizer", "genfs_trans"}),
}


def ablate(cfg: TrainConfig, drop) -> TrainConfig:
    """Configuration of an ablated variant.

    Dropping ``fuzzy_tokenizer`` keeps only the finest scale (largest merge
    budget) behind the basic tokenizer; dropping ``genfs_trans`` leaves a
    single rule, i.e. a plain transformer.
    """
    drop = {drop} if isinstance(drop, str) else set(drop)
    unknown = drop - {"fuzzy_tokenizer", "genfs_trans"}
    if unknown:
        raise ConfigError(f"cannot ablate {sorted(unknown)}")
    out = cfg
    if "fuzzy_tokenizer" in drop:
        out = replace(out, fuzzy_tokenizer=False, tokenizer_merges=(max(cfg.tokenizer_merges),))
    if "genfs_trans" in drop:
        out = replace(out, rules=1)
    return out


def sequence_features(ids: Sequence[int], vocab_size: int, max_len: int) -> np.ndarray:
    """L1-normalised bag of words over the vocabulary plus a weighted length term."""
    feat = np.zeros(vocab_size + 1)
    if len(ids):
        feat[:vocab_size] = np.bincount(np.asarray(ids, dtype=np.int64), minlength=vocab_size)[:vocab_size] / len(ids)
        feat[vocab_size] = LENGTH_WEIGHT * len(ids) / max_len
    return feat


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_loss_median: float
    val_loss: float
    train_acc: float
    val_acc: float

    def to_text(self) -> str:
        return " ".join(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}" for k, v in asdict(self).items())


class FuzzyS2S:
    def __init__(self, tokenizer: FuzzyTokenizer, vocab: Vocabulary, delegates: Sequence[fuzzy.Delegate],
                 cfg: TrainConfig, max_src_len: int):
        if len(delegates) != cfg.rules:
            raise ConfigError(f"{len(delegates)} delegates for {cfg.rules} rules")
        self.tokenizer = tokenizer
        self.vocab = vocab
        self.delegates = list(delegates)
        self.cfg = cfg
        self.max_src_len = max_src_len
        self.tcfg = cfg.transformer_config(len(vocab))
        self.consequents = [TransformerConsequent(self.tcfg, seed=cfg.seed * 1000 + k + 1) for k in range(cfg.rules)]

    @property
    def K(self) -> int:
        return len(self.consequents)

    # -- preprocessing ------------------------------------------------------
    def tokenize(self, text: str) -> list[str]:
        return self.tokenizer.tokenize(text)

    def encode(self, text_or_tokens) -> list[int]:
        tokens = self.tokenize(text_or_tokens) if isinstance(text_or_tokens, str) else text_or_tokens
        return self.vocab.w2v(tokens)

    def features(self, src_ids: Sequence[int]) -> np.ndarray:
        return sequence_features(src_ids, len(self.vocab), self.max_src_len)

    def fire(self, src_ids: Sequence[int]) -> fuzzy.FireStrengthVector:
        return fuzzy.fire_strengths(self.features(src_ids), self.delegates)

    def fire_matrix(self, src_batch: Sequence[Sequence[int]]) -> np.ndarray:
        feats = np.stack([self.features(s) for s in src_batch])
        return fuzzy.fire_strength_matrix(feats, self.delegates)

    # -- model ------------------------------------------------------------------
    def parameters(self) -> list[nx.Tensor]:
        return [p for c in self.consequents for p in c.parameters()]

    def named_parameters(self):
        for k, c in enumerate(self.consequents):
            for name, p in c.named_parameters():
                yield f"rule{k}.{name}", p

    def train(self, mode: bool = True):
        for c in self.consequents:
            c.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def fused_logits(self, src_ids: Sequence[Sequence[int]], tgt_ids: Sequence[Sequence[int]],
                     weights: np.ndarray | None = None) -> nx.Tensor:
        """Fire-strength weighted sum of rule logits, shape (B, M+1, vocab)."""
        if weights is None:
            weights = self.fire_matrix(src_ids)
        src = pad_batch(src_ids)
        tgt_in = pad_batch(tgt_ids)
        limit = self.tcfg.max_len
        if src.shape[1] > limit or tgt_in.shape[1] > limit:
            raise ConfigError(f"sequence longer than max_len={limit}")
        outs = [c.logits(src, tgt_in) for c in self.consequents]
        return nx.stack_weighted(outs, weights)

    def batch_loss(self, src_ids, tgt_ids, weights=None, gamma: float | None = None):
        """Cross-entropy against eos-terminated targets (pad ignored) plus gamma times the L2 term."""
        logits = self.fused_logits(src_ids, tgt_ids, weights)
        tgt_out = pad_batch(tgt_ids, prepend_bos=False, append_eos=True)
        ce = nx.cross_entropy(logits, tgt_out, ignore_index=PAD)
        reg = nx.l2_penalty(self.parameters(), self.cfg.gamma if gamma is None else gamma)
        return ce + reg, ce, logits, tgt_out

    def forward(self, src, tgt_prefix=()) -> np.ndarray:
        """Prediction matrix H = softmax(fused logits), shape (len(tgt_prefix) + 1, vocab)."""
        src_ids = self.encode(src)
        tgt_ids = self.encode(tgt_prefix) if isinstance(tgt_prefix, str) else self.vocab.w2v(tgt_prefix)
        self.eval()
        with nx.no_grad():
            logits = self.fused_logits([src_ids], [tgt_ids])
            return nx.softmax(logits, axis=-1).data[0]

    # -- postprocessing -------------------------------------------------------
    def generate_ids(self, src_batch: Sequence[Sequence[int]], max_len: int | None = None,
                     weights: np.ndarray | None = None) -> list[list[int]]:
        """Greedy decoding from bos; a row stops at eos or after ``max_len`` tokens."""
        limit = self.tcfg.max_len - 1
        max_len = limit if max_len is None else min(max_len, limit)
        if not len(src_batch):
            return []
        if weights is None:
            weights = self.fire_matrix(src_batch)
        self.eval()
        B = len(src_batch)
        out = [[] for _ in range(B)]
        done = np.zeros(B, dtype=bool)
        with nx.no_grad():
            src = pad_batch(src_batch)
            memories = [c.encode(src) for c in self.consequents]
            prefix = np.full((B, 1), BOS, dtype=np.int64)
            for _ in range(max_len):
                step = [c.decode(mem, blocked, prefix).data[:, -1, :] for c, (mem, blocked) in zip(self.consequents, memories)]
                fused = None
                for k, lg in enumerate(step):
                    term = lg * weights[:, k, None].astype(lg.dtype)
                    fused = term if fused is None else fused + term
                fused[:, [PAD, BOS]] = -np.inf  # never valid targets
                nxt = fused.argmax(axis=-1)
                for i in np.nonzero(~done)[0]:
                    if nxt[i] == EOS:
                        done[i] = True
                    else:
                        out[i].append(int(nxt[i]))
                if done.all():
                    break
                nxt = np.where(done, PAD, nxt)
                prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
        return out

    def generate(self, src, max_len: int | None = None) -> list[str]:
        return self.generate_batch([src], max_len)[0]

    def generate_batch(self, srcs, max_len: int | None = None, batch_size: int = 64,
                       weights: np.ndarray | None = None) -> list[list[str]]:
        ids = [self.encode(s) for s in srcs]
        out = []
        for start in range(0, len(ids), batch_size):
            chunk = ids[start:start + batch_size]
            w = None if weights is None else weights[start:start + batch_size]
            out.extend(self.vocab.v2w(seq) for seq in self.generate_ids(chunk, max_len, w))
        return out

    def translate(self, texts: Sequence[str], max_len: int | None = None) -> list[str]:
        return [detokenize(t, self.tokenizer.marker) for t in self.generate_batch(list(texts), max_len)]

    # -- interpretability -----------------------------------------------------
    def explain(self, src) -> dict:
        """Per-rule antecedent summary, fire strengths, and standalone vs fused outputs."""
        ids = self.encode(src)
        fs = self.fire([*ids])
        rules = []
        for k, d in enumerate(self.delegates):
            bow = d.feature[:-1]
            top = [int(i) for i in np.argsort(-bow, kind="stable")[:3] if bow[i] > 0]
            one_hot = np.zeros((1, self.K))
            one_hot[0, k] = 1.0
            standalone = self.vocab.v2w(self.generate_ids([ids], weights=one_hot)[0])
            rules.append({
                "rule": k,
                "delegate_source": d.source_id,
                "delegate_length": int(round(d.feature[-1] / LENGTH_WEIGHT * self.max_src_len)),
                "dominant_tokens": self.vocab.v2w(top),
                "raw": float(fs.raw[k]),
                "strength": float(fs.normalized[k]),
                "output": detokenize(standalone, self.tokenizer.marker),
            })
        fused = self.vocab.v2w(self.generate_ids([ids])[0])
        return {"input_length": len(ids), "rules": rules, "winner": fs.winner,
                "output": detokenize(fused, self.tokenizer.marker)}


def format_explanation(report: dict) -> str:
    lines = [f"input_length={report['input_length']} winner=rule{report['winner']}"]
    for r in report["rules"]:
        lines.append(f"rule{r['rule']} delegate_length={r['delegate_length']} "
                     f"dominant={','.join(r['dominant_tokens'])} raw={r['raw']:.4f} strength={r['strength']:.4f}")
        lines.append(f"  IF input is like delegate {r['delegate_source']} THEN {r['output']}")
    lines.append(f"fused: {report['output']}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Training


@dataclass
class EncodedPairs:
    src: list[list[int]]
    tgt: list[list[int]]


def _encode_records(model: FuzzyS2S, records: Sequence[DatasetRecord], tokenized=None) -> tuple[EncodedPairs, int]:
    src, tgt, dropped = [], [], 0
    limit = model.cfg.max_len - 1
    for i, r in enumerate(records):
        s_tok, t_tok = tokenized[i] if tokenized is not None else (model.tokenize(r.src), model.tokenize(r.tgt))
        if len(s_tok) > limit or len(t_tok) > limit:
            dropped += 1
            continue
        src.append(model.vocab.w2v(s_tok))
        tgt.append(model.vocab.w2v(t_tok))
    return EncodedPairs(src, tgt), dropped


def build(train: Sequence[DatasetRecord], cfg: TrainConfig, delegate_override: Sequence[int] | None = None):
    """Fit the preprocessing pipeline and elect rule antecedents; consequents stay untrained."""
    if not train:
        raise ConfigError("training set is empty")
    basic = [basic_tokenize(r.src) for r in train] + [basic_tokenize(r.tgt) for r in train]
    if cfg.fuzzy_tokenizer:
        tokenizer = FuzzyTokenizer.fit(basic, cfg.tokenizer_merges, seed=cfg.seed)
    else:
        tokenizer = FuzzyTokenizer.single_scale(basic, max(cfg.tokenizer_merges))
    tokenized = [(tokenizer.tokenize(r.src), tokenizer.tokenize(r.tgt)) for r in train]
    limit = cfg.max_len - 1
    kept = [(s, t) for s, t in tokenized if len(s) <= limit and len(t) <= limit]
    if len(kept) < len(tokenized):
        log.warning("dropped %d training records longer than max_len", len(tokenized) - len(kept))
    if not kept:
        raise ConfigError("every training record exceeds max_len")
    vocab = Vocabulary.build([s for s, _ in kept] + [t for _, t in kept])
    max_src_len = max(len(s) for s, _ in kept)
    feats = np.stack([sequence_features(vocab.w2v(s), len(vocab), max_src_len) for s, _ in kept])
    delegates = fuzzy.elect_delegates(feats, cfg.rules, seed=cfg.seed, override=delegate_override)
    model = FuzzyS2S(tokenizer, vocab, delegates, cfg, max_src_len)
    return model, tokenized


def make_batches(pairs: EncodedPairs, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Length-bucketed batches, formed once; random tie-breaking among equal lengths."""
    jitter = rng.permutation(len(pairs.src))
    order = sorted(range(len(pairs.src)), key=lambda i: (len(pairs.src[i]), len(pairs.tgt[i]), jitter[i]))
    order = np.asarray(order, dtype=np.int64)
    return [order[s:s + batch_size] for s in range(0, len(order), batch_size)]


def _token_hits(logits: nx.Tensor, tgt_out: np.ndarray) -> tuple[int, int]:
    mask = tgt_out != PAD
    pred = logits.data.argmax(axis=-1)
    return int(((pred == tgt_out) & mask).sum()), int(mask.sum())


def evaluate_teacher_forced(model: FuzzyS2S, pairs: EncodedPairs, weights: np.ndarray, batch_size: int = 64):
    """Mean cross-entropy and token accuracy under teacher forcing (no regulariser)."""
    if not pairs.src:
        return float("nan"), float("nan")
    model.eval()
    loss_sum = hits = total = 0.0
    with nx.no_grad():
        for start in range(0, len(pairs.src), batch_size):
            sl = slice(start, start + batch_size)
            logits = model.fused_logits(pairs.src[sl], pairs.tgt[sl], weights[sl])
            tgt_out = pad_batch(pairs.tgt[sl], prepend_bos=False, append_eos=True)
            h, n = _token_hits(logits, tgt_out)
            loss_sum += nx.cross_entropy(logits, tgt_out, PAD).item() * n
            hits += h
            total += n
    return loss_sum / total, hits / total


def fit(train: Sequence[DatasetRecord], val: Sequence[DatasetRecord], cfg: TrainConfig,
        delegate_override: Sequence[int] | None = None, on_epoch=None):
    """Antecedent election, then Adam over all consequent parameters.

    Returns the model restored to the epoch with the best validation token
    accuracy (earliest on ties) and the per-epoch log.
    """
    model, tokenized = build(train, cfg, delegate_override)
    train_pairs, _ = _encode_records(model, train, tokenized)
    val_pairs, dropped = _encode_records(model, val)
    if dropped:
        log.warning("dropped %d validation records longer than max_len", dropped)
    w_train = model.fire_matrix(train_pairs.src)
    w_val = model.fire_matrix(val_pairs.src) if val_pairs.src else np.zeros((0, model.K))

    params = model.parameters()
    state = nx.AdamState(lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    batches = make_batches(train_pairs, cfg.batch_size, rng)
    total_steps = len(batches) * cfg.epochs
    history: list[EpochLog] = []
    best_acc, best = -math.inf, None
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        losses, hits, total = [], 0, 0
        for b in rng.permutation(len(batches)):
            idx = batches[b]
            src = [train_pairs.src[i] for i in idx]
            tgt = [train_pairs.tgt[i] for i in idx]
            for p in params:
                p.grad = None
            loss, _, logits, tgt_out = model.batch_loss(src, tgt, w_train[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"loss diverged to {value} at epoch {epoch}")
            nx.backward(loss)
            if cfg.clip_norm:
                nx.clip_grad_norm(params, cfg.clip_norm)
            state.lr = scheduled_lr(cfg.learning_rate, cfg.lr_schedule, state.step, total_steps)
            nx.adam_step(params, [p.grad for p in params], state)
            losses.append(value)
            h, n = _token_hits(logits, tgt_out)
            hits += h
            total += n
        val_loss, val_acc = evaluate_teacher_forced(model, val_pairs, w_val) if val_pairs.src else (float("nan"), hits / total)
        entry = EpochLog(epoch, float(np.mean(losses)), float(np.median(losses)), val_loss, hits / total, val_acc)
        history.append(entry)
        log.info(entry.to_text())
        if on_epoch is not None:
            on_epoch(entry)
        if val_acc > best_acc:
            best_acc, best = val_acc, [p.data.copy() for p in params]
    for p, saved in zip(params, best):
        p.data = saved
    model.eval()
    return model, history
