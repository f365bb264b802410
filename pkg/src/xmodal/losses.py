"""Batch losses on adapted embeddings, with gradients w.r.t. the embeddings."""
import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidBatch, InvalidConfig, ShapeError
from .numerics import normalize_rows, unit_backward

DEFAULT_TEMPERATURE = 0.07


class PairMiningPolicy(str, enum.Enum):
    ALL_PAIRS = "all_pairs"
    CROSS_MODAL_ONLY = "cross_modal_only"


@dataclass(frozen=True)
class BatchEmbeddings:
    """Row-aligned audio and text embeddings; ``labels[i]`` belongs to both row ``i``s."""

    audio: np.ndarray
    text: np.ndarray
    labels: tuple

    def __post_init__(self):
        audio = np.asarray(self.audio, dtype=np.float64)
        text = np.asarray(self.text, dtype=np.float64)
        if audio.ndim != 2 or text.ndim != 2 or audio.shape != text.shape:
            raise ShapeError(f"audio {audio.shape} and text {text.shape} must be matching B x F' matrices")
        if len(self.labels) != audio.shape[0]:
            raise ShapeError(f"{len(self.labels)} labels for {audio.shape[0]} rows")
        object.__setattr__(self, "audio", audio)
        object.__setattr__(self, "text", text)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def size(self):
        return self.audio.shape[0]

    def label_codes(self):
        """Integer codes for labels, duplicated for the audio and text halves."""
        codes = {}
        per_row = np.array([codes.setdefault(lab, len(codes)) for lab in self.labels], dtype=np.int64)
        return np.concatenate([per_row, per_row])


@dataclass
class LossOutput:
    value: float
    audio_grad: np.ndarray
    text_grad: np.ndarray
    active_pair_count: int


def _stack(batch):
    if batch.size == 0:
        raise InvalidBatch("empty batch")
    z = np.vstack([batch.audio, batch.text])
    units, norms = normalize_rows(z)
    sim = np.clip(units @ units.T, -1.0, 1.0)
    # identical embeddings (one clip drawn twice in a batch) are exactly similar;
    # rounding to 1 - eps would make them "active" with a ~1e-16 loss
    _, group = np.unique(z, axis=0, return_inverse=True)
    group = group.ravel()
    if np.unique(group).size < group.size:
        same = (group[:, None] == group[None, :]) & (norms > 0.0)[:, None]
        sim[same] = 1.0
    return units, norms, sim


def _finish(batch, units, norms, sym_coef, value, active):
    grad = unit_backward(units, norms, sym_coef @ units)
    b = batch.size
    return LossOutput(float(value), grad[:b], grad[b:], int(active))


def contrastive_loss(batch, policy=PairMiningPolicy.ALL_PAIRS):
    """Pairwise cosine contrastive loss averaged over pairs with positive loss.

    Same-label pairs cost ``1 - s`` and different-label pairs ``max(0, s)``.
    ``CROSS_MODAL_ONLY`` keeps only audio-text pairs; ``ALL_PAIRS`` adds
    audio-audio and text-text pairs (never an item with itself). A batch where
    every pair is already satisfied returns value 0, zero gradients and
    ``active_pair_count == 0``.
    """
    policy = PairMiningPolicy(policy)
    units, norms, sim = _stack(batch)
    value, active, coef = kernels.contrastive_coeffs(
        sim, batch.label_codes(), batch.size, policy is PairMiningPolicy.CROSS_MODAL_ONLY)
    return _finish(batch, units, norms, coef + coef.T, value, active)


def nt_xent_loss(batch, policy=PairMiningPolicy.CROSS_MODAL_ONLY, temperature=DEFAULT_TEMPERATURE):
    """Normalized temperature-scaled cross entropy, averaged over all 2B anchors.

    Every audio and every text item is an anchor whose row-aligned partner is
    the positive. Candidates are the opposite-modality items
    (``CROSS_MODAL_ONLY``) or every other item in the batch (``ALL_PAIRS``).
    """
    policy = PairMiningPolicy(policy)
    if not (isinstance(temperature, (int, float)) and math.isfinite(temperature) and temperature > 0):
        raise InvalidConfig(f"temperature must be a positive finite number, got {temperature!r}")
    if batch.size < 1:
        raise InvalidBatch("empty batch")
    units, norms, sim = _stack(batch)
    value, coef = kernels.ntxent_coeffs(
        sim, batch.size, policy is PairMiningPolicy.CROSS_MODAL_ONLY, float(temperature))
    return _finish(batch, units, norms, coef + coef.T, value, 2 * batch.size)


LOSSES = {"contrastive": contrastive_loss, "nt_xent": nt_xent_loss}
