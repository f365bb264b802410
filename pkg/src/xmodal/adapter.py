"""Two-layer perceptron adapters mapping pooled encoder features to the shared space.

An adapter pools its input sequence first and then applies
``W2 @ relu(W1 @ x + b1) + b2`` once per item.

Checkpoint layout (little-endian)::

    b"XMCK", version u16 = 1
    for adapter in (audio, text):
        F, H, F' as u32
        W1 (H*F), b1 (H), W2 (F'*H), b2 (F') as float64
    metadata length u32, then that many bytes of UTF-8 JSON
"""
import hashlib
import json
import struct
from dataclasses import dataclass, field
from itertools import count

import numpy as np

from .errors import CorruptFile, FormatError, InvalidCache, InvalidConfig, ShapeError
from .numerics import mean_pool

DEFAULT_HIDDEN = 512
DEFAULT_OUT = 512

CKPT_MAGIC = b"XMCK"
CKPT_VERSION = 1
TOWERS = ("audio", "text")

_ids = count()


@dataclass(eq=False)
class Adapter:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    version: int = 0
    uid: int = field(default_factory=lambda: next(_ids))

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        h, f = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[1] != h or self.b2.shape != (self.W2.shape[0],):
            raise ShapeError(
                f"inconsistent adapter shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}")

    @property
    def in_dim(self):
        return self.W1.shape[1]

    @property
    def hidden(self):
        return self.W1.shape[0]

    @property
    def out_dim(self):
        return self.W2.shape[0]

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def mark_updated(self):
        """Record an in-place parameter update so older caches are rejected."""
        self.version += 1

    def copy(self):
        return Adapter(*(p.copy() for p in self.params()))

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec):
        offset = 0
        for p in self.params():
            p[...] = np.reshape(vec[offset:offset + p.size], p.shape)
            offset += p.size
        self.mark_updated()


@dataclass
class AdapterGradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def as_list(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def flat(self):
        return np.concatenate([g.ravel() for g in self.as_list()])


@dataclass(frozen=True)
class ForwardCache:
    adapter_uid: int
    adapter_version: int
    pooled: np.ndarray
    pre: np.ndarray
    post: np.ndarray


def init_adapter(in_dim, hidden=DEFAULT_HIDDEN, out_dim=DEFAULT_OUT, seed=0):
    """Fan-in uniform weights, zero biases; deterministic in ``seed``."""
    for name, v in (("F", in_dim), ("H", hidden), ("F'", out_dim)):
        if int(v) != v or v < 1:
            raise InvalidConfig(f"adapter dimension {name} must be a positive integer, got {v!r}")
    rng = np.random.default_rng(seed)
    w1_bound = 1.0 / np.sqrt(in_dim)
    w2_bound = 1.0 / np.sqrt(hidden)
    W1 = rng.uniform(-w1_bound, w1_bound, size=(hidden, in_dim))
    W2 = rng.uniform(-w2_bound, w2_bound, size=(out_dim, hidden))
    return Adapter(W1, np.zeros(hidden), W2, np.zeros(out_dim))


def forward_pooled(adapter, pooled):
    """Batched forward on already-pooled rows (``N x F``)."""
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.ndim != 2 or pooled.shape[1] != adapter.in_dim:
        raise ShapeError(f"adapter expects {adapter.in_dim} input features, got shape {pooled.shape}")
    pre = pooled @ adapter.W1.T + adapter.b1
    post = np.maximum(pre, 0.0)
    out = post @ adapter.W2.T + adapter.b2
    return out, ForwardCache(adapter.uid, adapter.version, pooled, pre, post)


def forward(adapter, seq):
    """Adapt one ``T x F`` sequence; returns ``(output vector, cache)``."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != adapter.in_dim:
        raise ShapeError(f"adapter expects T x {adapter.in_dim} input, got shape {seq.shape}")
    out, cache = forward_pooled(adapter, mean_pool(seq)[None, :])
    return out[0], cache


def backward(adapter, cache, output_grad):
    """Parameter gradients given dL/d(output); handles single and batched caches.

    The ReLU derivative at exactly zero is taken as zero.
    """
    if not isinstance(cache, ForwardCache):
        raise InvalidCache("cache is not a ForwardCache")
    if cache.adapter_uid != adapter.uid or cache.adapter_version != adapter.version:
        raise InvalidCache("cache was produced by a different adapter or before a parameter update")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (cache.pooled.shape[0], adapter.out_dim):
        raise InvalidCache(f"output gradient shape {g.shape} does not match cached batch "
                           f"({cache.pooled.shape[0]}, {adapter.out_dim})")
    dW2 = g.T @ cache.post
    db2 = g.sum(axis=0)
    d_pre = (g @ adapter.W2) * (cache.pre > 0.0)
    dW1 = d_pre.T @ cache.pooled
    db1 = d_pre.sum(axis=0)
    return AdapterGradients(dW1, db1, dW2, db2)


# ----------------------------------------------------------------- checkpoints

def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def params_hash(adapters):
    """SHA-256 over the raw float64 parameters of both towers."""
    h = hashlib.sha256()
    for tower in TOWERS:
        for p in adapters[tower].params():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()


def encode_checkpoint(adapters, metadata):
    parts = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION)]
    for tower in TOWERS:
        a = adapters[tower]
        parts.append(struct.pack("<III", a.in_dim, a.hidden, a.out_dim))
        for p in a.params():
            parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    blob = _canonical_json(metadata).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    return b"".join(parts)


def save_checkpoint(path, adapters, metadata):
    """Write both adapters plus JSON metadata (epoch, score, config_hash, ...)."""
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(adapters, metadata))


def decode_checkpoint(raw):
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CorruptFile(f"checkpoint truncated at byte {pos} (needed {n} more)")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != CKPT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<H", take(2))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    adapters = {}
    for tower in TOWERS:
        f, h, fo = struct.unpack("<III", take(12))
        shapes = [(h, f), (h,), (fo, h), (fo,)]
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape))
            arrays.append(np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).astype(np.float64))
        adapters[tower] = Adapter(*arrays)
    (length,) = struct.unpack("<I", take(4))
    blob = bytes(take(length))
    if pos != len(view):
        raise CorruptFile(f"{len(view) - pos} trailing bytes after checkpoint metadata")
    try:
        metadata = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"checkpoint metadata unreadable: {exc}") from None
    return adapters, metadata


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
