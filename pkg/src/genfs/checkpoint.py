"""Checkpoint persistence.

Layout: a plain-text header of length-prefixed sections followed by the raw
parameter payload as little-endian float32::

    genfs-ckpt v1
    section config <nbytes>      key=value training config
    section model <nbytes>       max_src_len
    section delegates <nbytes>   delegate file
    section vocabulary <nbytes>  one token per line
    section tokenizer <nbytes>   tokenizer model
    section tensors <nbytes>     name shape byte-offset, one line per tensor
    payload <nbytes>
    <raw float32 bytes>
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import fuzzy
from .config import format_config, parse_config
from .errors import FormatError
from .model import FuzzyS2S
from .tokenization import FuzzyTokenizer, Vocabulary

FORMAT_VERSION = "genfs-ckpt v1"
_SECTIONS = ("config", "model", "delegates", "vocabulary", "tokenizer", "tensors")
_LE_F32 = np.dtype("<f4")


def _manifest(model: FuzzyS2S) -> tuple[str, bytes]:
    lines, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype=_LE_F32).tobytes()
        shape = "x".join(str(s) for s in p.shape) or "scalar"
        lines.append(f"{name} {shape} {offset}")
        chunks.append(raw)
        offset += len(raw)
    return "\n".join(lines) + "\n", b"".join(chunks)


def dumps(model: FuzzyS2S) -> bytes:
    manifest, payload = _manifest(model)
    texts = {
        "config": format_config(model.cfg),
        "model": f"max_src_len={model.max_src_len}\n",
        "delegates": fuzzy.format_delegates(model.delegates),
        "vocabulary": model.vocab.dumps(),
        "tokenizer": model.tokenizer.dumps(),
        "tensors": manifest,
    }
    out = [f"{FORMAT_VERSION}\n".encode()]
    for name in _SECTIONS:
        body = texts[name].encode("utf-8")
        out += [f"section {name} {len(body)}\n".encode(), body]
    out += [f"payload {len(payload)}\n".encode(), payload]
    return b"".join(out)


def save(model: FuzzyS2S, path) -> None:
    Path(path).write_bytes(dumps(model))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob, self.pos = blob, 0

    def line(self) -> str:
        end = self.blob.find(b"\n", self.pos)
        if end < 0:
            raise FormatError("truncated checkpoint header")
        text = self.blob[self.pos:end].decode("utf-8")
        self.pos = end + 1
        return text

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError("truncated checkpoint body")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk


def _shape(text: str) -> tuple[int, ...]:
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def loads(blob: bytes) -> FuzzyS2S:
    r = _Reader(blob)
    version = r.line()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format {version[:40]!r} (expected {FORMAT_VERSION!r})")
    texts = {}
    for name in _SECTIONS:
        parts = r.line().split(" ")
        if len(parts) != 3 or parts[0] != "section" or parts[1] != name:
            raise FormatError(f"expected section {name!r}, got {' '.join(parts)[:60]!r}")
        texts[name] = r.take(int(parts[2])).decode("utf-8")
    head = r.line().split(" ")
    if len(head) != 2 or head[0] != "payload":
        raise FormatError("missing payload marker")
    payload = r.take(int(head[1]))
    if r.pos != len(blob):
        raise FormatError("trailing bytes after payload")

    cfg = parse_config(texts["config"])
    meta = dict(line.split("=", 1) for line in texts["model"].splitlines() if line)
    model = FuzzyS2S(FuzzyTokenizer.loads(texts["tokenizer"]), Vocabulary.loads(texts["vocabulary"]),
                     fuzzy.parse_delegates(texts["delegates"]), cfg, int(meta["max_src_len"]))

    params = dict(model.named_parameters())
    seen = set()
    for line in texts["tensors"].splitlines():
        name, shape, offset = line.split(" ")
        if name not in params:
            raise FormatError(f"checkpoint tensor {name!r} has no counterpart in the model")
        shape, offset = _shape(shape), int(offset)
        p = params[name]
        if shape != p.shape:
            raise FormatError(f"tensor {name!r}: checkpoint shape {shape} vs model {p.shape}")
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 4 * count > len(payload):
            raise FormatError(f"tensor {name!r} runs past the payload")
        p.data = np.frombuffer(payload, dtype=_LE_F32, count=count, offset=offset).reshape(shape).astype(np.float32)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise FormatError(f"checkpoint lacks tensors {sorted(missing)[:3]}")
    model.eval()
    return model


def load(path) -> FuzzyS2S:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"checkpoint {path} not found")
    return loads(path.read_bytes())
