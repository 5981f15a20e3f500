"""Compact pre-norm encoder-decoder transformer used as one rule consequent."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError
from .numerics import Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3
NEG_INF = -1e9


@dataclass
class TransformerConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    dropout: float = 0.1
    max_len: int = 64
    init: str = "xavier"  # or "zeros"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if min(self.vocab_size, self.d_model, self.n_heads, self.n_layers, self.d_ff, self.max_len) <= 0:
            raise ConfigError("transformer dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.init not in ("xavier", "zeros"):
            raise ConfigError(f"unknown init scheme {self.init!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class Module:
    training = False

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zeros: bool = False):
        bound = math.sqrt(6.0 / (n_in + n_out))
        w = np.zeros((n_in, n_out)) if zeros else rng.uniform(-bound, bound, (n_in, n_out))
        self.weight = _param(w)
        self.bias = _param(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, d: int):
        self.weight = _param(np.ones(d))
        self.bias = _param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.weight, self.bias)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng, zeros=False):
        self.n_heads = n_heads
        self.q = Linear(d_model, d_model, rng, zeros)
        self.k = Linear(d_model, d_model, rng, zeros)
        self.v = Linear(d_model, d_model, rng, zeros)
        self.o = Linear(d_model, d_model, rng, zeros)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, T, D = x.shape
        return x.reshape(B, T, self.n_heads, D // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, memory: Tensor, blocked: np.ndarray) -> Tensor:
        """``blocked`` is a boolean (B, 1|H, Tq, Tk) array, True where attention is forbidden."""
        B, Tq, D = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(memory)), self._split(self.v(memory))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(D // self.n_heads))
        weights = nx.softmax(nx.masked_fill(scores, blocked, NEG_INF), axis=-1)
        self.last_weights = weights.data
        out = (weights @ v).transpose(0, 2, 1, 3).reshape(B, Tq, D)
        return self.o(out)


class FeedForward(Module):
    def __init__(self, d_model, d_ff, rng, zeros=False):
        self.up = Linear(d_model, d_ff, rng, zeros)
        self.down = Linear(d_ff, d_model, rng, zeros)

    def __call__(self, x):
        return self.down(self.up(x).relu())


class EncoderLayer(Module):
    def __init__(self, cfg: TransformerConfig, rng):
        zeros = cfg.init == "zeros"
        self.norm1, self.norm2 = LayerNorm(cfg.d_model), LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, zeros)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng, zeros)

    def __call__(self, x, blocked, drop):
        h = self.norm1(x)
        x = x + drop(self.attn(h, h, blocked))
        return x + drop(self.ff(self.norm2(x)))


class DecoderLayer(Module):
    def __init__(self, cfg: TransformerConfig, rng):
        zeros = cfg.init == "zeros"
        self.norm1, self.norm2, self.norm3 = (LayerNorm(cfg.d_model) for _ in range(3))
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, zeros)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, zeros)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng, zeros)

    def __call__(self, y, memory, self_blocked, cross_blocked, drop):
        h = self.norm1(y)
        y = y + drop(self.self_attn(h, h, self_blocked))
        y = y + drop(self.cross_attn(self.norm2(y), memory, cross_blocked))
        return y + drop(self.ff(self.norm3(y)))


def positional_encoding(length: int, d_model: int, max_len: int | None = None) -> np.ndarray:
    """Sinusoidal table: even columns sin(p / 10000^(2i/d)), odd columns cos of the same angle."""
    if max_len is not None and length > max_len:
        raise ContractError(f"sequence length {length} exceeds max_len {max_len}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe.astype(nx.get_default_dtype())


def pad_batch(seqs, prepend_bos: bool = True, append_eos: bool = False) -> np.ndarray:
    rows = [([BOS] if prepend_bos else []) + list(s) + ([EOS] if append_eos else []) for s in seqs]
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


class TransformerConsequent(Module):
    """Encoder-decoder transformer plus the per-rule affine map to vocabulary logits."""

    def __init__(self, cfg: TransformerConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng(seed + 7919)
        zeros = cfg.init == "zeros"
        emb = np.zeros((cfg.vocab_size, cfg.d_model)) if zeros else rng.normal(0, cfg.d_model ** -0.5, (cfg.vocab_size, cfg.d_model))
        self.embed = _param(emb)
        self.encoder = [EncoderLayer(cfg, rng) for _ in range(cfg.n_layers)]
        self.decoder = [DecoderLayer(cfg, rng) for _ in range(cfg.n_layers)]
        self.enc_norm = LayerNorm(cfg.d_model)
        self.dec_norm = LayerNorm(cfg.d_model)
        self.out = Linear(cfg.d_model, cfg.vocab_size, rng, zeros)

    def _drop(self, x: Tensor) -> Tensor:
        return nx.dropout(x, self.cfg.dropout, self.dropout_rng, self.training)

    def embed_with_bos(self, indices) -> Tensor:
        """Token embeddings of bos + indices plus positional encoding, shape (N+1, d_model)."""
        ids = pad_batch([list(indices)])
        return self._embed(ids)[0]

    def _embed(self, ids: np.ndarray) -> Tensor:
        T = ids.shape[1]
        pe = positional_encoding(T, self.cfg.d_model, self.cfg.max_len)
        x = nx.embedding(self.embed, ids) * math.sqrt(self.cfg.d_model)
        return x + Tensor(pe, dtype=x.data.dtype)

    def encode(self, src_ids: np.ndarray):
        """src_ids: (B, S) padded, bos already prepended. Returns memory and key-padding mask."""
        src_pad = src_ids == PAD
        blocked = src_pad[:, None, None, :]
        x = self._drop(self._embed(src_ids))
        for layer in self.encoder:
            x = layer(x, blocked, self._drop)
        return self.enc_norm(x), blocked

    def decode(self, memory: Tensor, cross_blocked: np.ndarray, tgt_in: np.ndarray) -> Tensor:
        """tgt_in: (B, T) bos-prefixed decoder input. Returns (B, T, vocab) logits."""
        T = tgt_in.shape[1]
        causal = np.triu(np.ones((T, T), dtype=bool), k=1)
        self_blocked = causal[None, None] | (tgt_in == PAD)[:, None, None, :]
        y = self._drop(self._embed(tgt_in))
        for layer in self.decoder:
            y = layer(y, memory, self_blocked, cross_blocked, self._drop)
        return self.out(self.dec_norm(y))

    def logits(self, src_ids: np.ndarray, tgt_in: np.ndarray) -> Tensor:
        memory, blocked = self.encode(src_ids)
        return self.decode(memory, blocked, tgt_in)

    def forward(self, src_indices, tgt_indices) -> Tensor:
        """Single-pair teacher-forced logits of shape (len(tgt) + 1, vocab)."""
        src = pad_batch([list(src_indices)])
        tgt = pad_batch([list(tgt_indices)])
        return self.logits(src, tgt)[0]

    __call__ = forward
