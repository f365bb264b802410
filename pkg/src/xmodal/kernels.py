"""Hot inner loops of training and evaluation.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorized numpy version. ``BACKEND`` (see ``_jit``) picks which one the
module-level names point at. Both take the same arguments and return the same
values up to floating-point summation order.

Item layout used by the loss kernels: rows ``0..B-1`` of the similarity
matrix are audio items, rows ``B..2B-1`` are text items, and row ``i`` and
row ``i + B`` form the row-aligned positive pair.
"""
import numpy as np

from ._jit import BACKEND, HAVE_NUMBA, njit


# ---------------------------------------------------------------- contrastive

def _contrastive_loop(sim, labels, n_audio, cross_only):
    n = sim.shape[0]
    coef = np.zeros((n, n))
    total = 0.0
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            i_audio = i < n_audio
            j_audio = j < n_audio
            if cross_only and i_audio == j_audio:
                continue
            s = sim[i, j]
            if labels[i] == labels[j]:
                loss = 1.0 - s
                slope = -1.0
            else:
                loss = s if s > 0.0 else 0.0
                slope = 1.0
            if loss > 0.0:
                total += loss
                count += 1
                coef[i, j] = slope
    if count == 0:
        return 0.0, 0, coef
    inv = 1.0 / count
    for i in range(n):
        for j in range(i + 1, n):
            coef[i, j] *= inv
    return total / count, count, coef


def contrastive_numpy(sim, labels, n_audio, cross_only):
    """Mean contrastive loss over active pairs and d(value)/d(sim).

    Returns ``(value, active_count, coef)`` where ``coef`` is strictly upper
    triangular: ``coef[i, j]`` is the derivative of the value with respect to
    the similarity of the unordered pair ``{i, j}``.
    """
    n = sim.shape[0]
    modality = np.arange(n) < n_audio
    mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    if cross_only:
        mask &= modality[:, None] != modality[None, :]
    positive = labels[:, None] == labels[None, :]
    loss = np.where(positive, 1.0 - sim, np.maximum(sim, 0.0))
    active = mask & (loss > 0.0)
    count = int(active.sum())
    coef = np.zeros((n, n))
    if count == 0:
        return 0.0, 0, coef
    value = float(loss[active].sum()) / count
    coef[active] = np.where(positive[active], -1.0, 1.0) / count
    return value, count, coef


# -------------------------------------------------------------------- nt-xent

def _ntxent_loop(sim, n_audio, cross_only, temperature):
    n = sim.shape[0]
    coef = np.zeros((n, n))
    probs = np.zeros(n)
    total = 0.0
    for a in range(n):
        a_audio = a < n_audio
        pos = a + n_audio if a_audio else a - n_audio
        peak = -np.inf
        for c in range(n):
            if c == a or (cross_only and (c < n_audio) == a_audio):
                continue
            z = sim[a, c] / temperature
            if z > peak:
                peak = z
        denom = 0.0
        for c in range(n):
            probs[c] = 0.0
            if c == a or (cross_only and (c < n_audio) == a_audio):
                continue
            e = np.exp(sim[a, c] / temperature - peak)
            probs[c] = e
            denom += e
        total += peak + np.log(denom) - sim[a, pos] / temperature
        scale = 1.0 / (temperature * n)
        for c in range(n):
            if probs[c] != 0.0:
                coef[a, c] = probs[c] / denom * scale
        coef[a, pos] -= scale
    return total / n, coef


def ntxent_numpy(sim, n_audio, cross_only, temperature):
    """Mean NT-Xent over all anchors and d(value)/d(sim).

    ``coef[a, c]`` is the derivative with respect to ``sim[a, c]`` taken as the
    logit of anchor ``a``; the caller symmetrizes since ``sim`` is symmetric.
    """
    n = sim.shape[0]
    idx = np.arange(n)
    modality = idx < n_audio
    if cross_only:
        cand = modality[:, None] != modality[None, :]
    else:
        cand = ~np.eye(n, dtype=bool)
    pos = np.where(modality, idx + n_audio, idx - n_audio)
    logits = np.where(cand, sim / temperature, -np.inf)
    peak = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - peak)
    denom = expd.sum(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(denom[:, 0])
    value = float(np.mean(lse - sim[idx, pos] / temperature))
    coef = expd / denom
    coef[idx, pos] -= 1.0
    coef /= temperature * n
    return value, coef


# --------------------------------------------------------------------- ranking

def _relevant_ranks_loop(sim, relevant, tie_order):
    n_q, n_items = sim.shape
    ranks = np.empty(n_q, dtype=np.int64)
    for q in range(n_q):
        r = relevant[q]
        s_rel = sim[q, r]
        t_rel = tie_order[r]
        ahead = 0
        for j in range(n_items):
            s = sim[q, j]
            if s > s_rel or (s == s_rel and tie_order[j] < t_rel):
                ahead += 1
        ranks[q] = ahead + 1
    return ranks


def relevant_ranks_numpy(sim, relevant, tie_order):
    """1-based rank of each query's single relevant item.

    Items are ordered by descending similarity, ties by ascending
    ``tie_order`` (the position of the item id in sorted order).
    """
    q = np.arange(sim.shape[0])
    s_rel = sim[q, relevant][:, None]
    t_rel = tie_order[relevant][:, None]
    ahead = (sim > s_rel) | ((sim == s_rel) & (tie_order[None, :] < t_rel))
    return ahead.sum(axis=1).astype(np.int64) + 1


if HAVE_NUMBA:
    contrastive_numba = njit(cache=True)(_contrastive_loop)
    ntxent_numba = njit(cache=True)(_ntxent_loop)
    relevant_ranks_numba = njit(cache=True)(_relevant_ranks_loop)
else:
    contrastive_numba = ntxent_numba = relevant_ranks_numba = None

IMPLEMENTATIONS = {
    "numpy": {
        "contrastive": contrastive_numpy,
        "ntxent": ntxent_numpy,
        "relevant_ranks": relevant_ranks_numpy,
    },
}
if HAVE_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "contrastive": contrastive_numba,
        "ntxent": ntxent_numba,
        "relevant_ranks": relevant_ranks_numba,
    }

_active = IMPLEMENTATIONS[BACKEND]
contrastive_coeffs = _active["contrastive"]
ntxent_coeffs = _active["ntxent"]
relevant_ranks = _active["relevant_ranks"]
