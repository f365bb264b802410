"""Embedding items, paired datasets, the ``.xmeb`` binary format and manifests.

Embedding file layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"XMEB"
    4       2     format version (u16) = 1
    6       1     dtype code (u8) = 1, float32
    7       1     reserved (u8) = 0
    8       4     T (u32)
    12      4     F (u32)
    16      4*T*F float32 values, little-endian, row-major

A manifest is UTF-8 JSON lines with ``pair_id``, ``audio_id``,
``audio_embedding``, ``text_id``, ``text_embedding`` and ``split``. Paths are
relative to the embedding root. Unknown fields are ignored.
"""
import enum
import json
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import CorruptFile, DuplicateId, FormatError, InvalidValues, MissingArtifact, ShapeError
from .numerics import mean_pool

MAGIC = b"XMEB"
VERSION = 1
DTYPE_F32 = 1
_HEADER = struct.Struct("<4sHBBII")


class Modality(str, enum.Enum):
    AUDIO = "audio"
    TEXT = "text"


class Split(str, enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


class NoiseTier(str, enum.Enum):
    CLEAN = "clean"
    NOISY = "noisy"


@dataclass(frozen=True, eq=False)
class EmbeddingSequence:
    item_id: str
    modality: Modality
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeError(f"{self.item_id}: embedding must be T x F with T, F >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidValues(f"{self.item_id}: embedding contains NaN or infinite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "modality", Modality(self.modality))

    @property
    def T(self):
        return self.data.shape[0]

    @property
    def F(self):
        return self.data.shape[1]

    def pooled(self):
        return mean_pool(self.data)


@dataclass(frozen=True, eq=False)
class PairedExample:
    pair_id: str
    audio: EmbeddingSequence
    text: EmbeddingSequence
    label: str
    split: Split

    def __post_init__(self):
        if self.audio.modality is not Modality.AUDIO or self.text.modality is not Modality.TEXT:
            raise ShapeError(f"{self.pair_id}: audio/text modalities swapped")
        object.__setattr__(self, "split", Split(self.split))


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable collection of paired examples.

    Pooled feature matrices are computed once per dataset and cached, since
    adapters pool before the perceptron.
    """

    name: str
    examples: tuple
    noise_tier: NoiseTier = NoiseTier.CLEAN
    _split_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "noise_tier", NoiseTier(self.noise_tier))
        seen = set()
        for ex in self.examples:
            if ex.pair_id in seen:
                raise DuplicateId(f"{self.name}: duplicate pair_id {ex.pair_id!r}")
            seen.add(ex.pair_id)
        for attr in ("audio", "text"):
            dims = {getattr(ex, attr).F for ex in self.examples}
            if len(dims) > 1:
                raise ShapeError(f"{self.name}: {attr} feature dimensions disagree: {sorted(dims)}")

    def __len__(self):
        return len(self.examples)

    def labels(self):
        return sorted({ex.label for ex in self.examples})

    def split(self, split):
        """Sub-dataset holding only the examples of ``split`` (order kept)."""
        split = Split(split)
        if split not in self._split_cache:
            sub = Dataset(f"{self.name}/{split.value}",
                          [ex for ex in self.examples if ex.split is split], self.noise_tier)
            self._split_cache[split] = sub
        return self._split_cache[split]

    @cached_property
    def pooled_audio(self):
        return np.stack([ex.audio.pooled() for ex in self.examples]) if self.examples else np.zeros((0, 0))

    @cached_property
    def pooled_text(self):
        return np.stack([ex.text.pooled() for ex in self.examples]) if self.examples else np.zeros((0, 0))

    @property
    def audio_dim(self):
        return self.examples[0].audio.F

    @property
    def text_dim(self):
        return self.examples[0].text.F


def union(name, datasets, noise_tier=NoiseTier.NOISY):
    """Concatenate datasets, namespacing pair ids and labels by source dataset.

    Namespacing keeps an audio id that happens to exist in two corpora from
    turning into a false positive pair.
    """
    examples = []
    for ds in datasets:
        for ex in ds.examples:
            examples.append(PairedExample(f"{ds.name}:{ex.pair_id}", ex.audio, ex.text,
                                          f"{ds.name}:{ex.label}", ex.split))
    return Dataset(name, examples, noise_tier)


def encode_embedding(data):
    data = np.asarray(data)
    if data.ndim != 2:
        raise ShapeError(f"expected a T x F matrix, got shape {data.shape}")
    t, f = data.shape
    return _HEADER.pack(MAGIC, VERSION, DTYPE_F32, 0, t, f) + np.ascontiguousarray(data, dtype="<f4").tobytes()


def write_embedding_file(path, seq):
    """Write an :class:`EmbeddingSequence` (or a bare matrix) as ``.xmeb``."""
    data = seq.data if isinstance(seq, EmbeddingSequence) else seq
    with open(path, "wb") as fh:
        fh.write(encode_embedding(data))


def decode_embedding(raw, item_id="<bytes>", modality=Modality.AUDIO):
    if len(raw) < _HEADER.size:
        raise CorruptFile(f"{item_id}: file shorter than the {_HEADER.size}-byte header")
    magic, version, dtype, _reserved, t, f = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{item_id}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{item_id}: unsupported format version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{item_id}: unsupported dtype code {dtype}")
    if t < 1 or f < 1:
        raise CorruptFile(f"{item_id}: header declares empty shape ({t}, {f})")
    payload = len(raw) - _HEADER.size
    if payload != 4 * t * f:
        raise CorruptFile(f"{item_id}: header says {t}x{f} ({4 * t * f} bytes), payload has {payload} bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(t, f).astype(np.float32)
    return EmbeddingSequence(item_id, modality, data)


def read_embedding_file(path, item_id=None, modality=Modality.AUDIO):
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_embedding(raw, item_id if item_id is not None else os.fspath(path), modality)


_REQUIRED = ("pair_id", "audio_id", "audio_embedding", "text_id", "text_embedding", "split")


def load_manifest(path, embedding_root=None, name=None, noise_tier=NoiseTier.CLEAN):
    """Load a JSON-lines manifest into a :class:`Dataset`.

    Records keep their order; every record with the same ``audio_id`` gets the
    same label. Embedding files referenced more than once are read once.
    """
    root = os.path.dirname(os.fspath(path)) if embedding_root is None else os.fspath(embedding_root)
    cache = {}

    def fetch(rel, item_id, modality, pair_id):
        full = os.path.join(root, rel)
        key = (full, modality)
        if key not in cache:
            if not os.path.isfile(full):
                raise MissingArtifact(f"pair {pair_id!r}: missing embedding file {full}", pair_id=pair_id)
            cache[key] = read_embedding_file(full, item_id, modality)
        return cache[key]

    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: not a JSON record ({exc.msg})") from None
            missing = [k for k in _REQUIRED if k not in rec]
            if missing:
                raise FormatError(f"{path}:{lineno}: missing fields {missing}")
            try:
                split = Split(rec["split"])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: unknown split {rec['split']!r}") from None
            pid = str(rec["pair_id"])
            audio = fetch(rec["audio_embedding"], str(rec["audio_id"]), Modality.AUDIO, pid)
            text = fetch(rec["text_embedding"], str(rec["text_id"]), Modality.TEXT, pid)
            examples.append(PairedExample(pid, audio, text, str(rec["audio_id"]), split))
    if name is None:
        name = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return Dataset(name, examples, noise_tier)


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
