"""Finite-difference verification of the adapter + loss composite."""
import numpy as np

from .adapter import backward, forward_pooled, init_adapter
from .losses import BatchEmbeddings, PairMiningPolicy, contrastive_loss, nt_xent_loss
from .numerics import check_gradient, mean_pool


def _loss(kind, batch, policy, temperature):
    if kind == "nt_xent":
        return nt_xent_loss(batch, policy, temperature)
    return contrastive_loss(batch, policy)


def _draw(rng, max_dim, max_batch, max_frames):
    f_a, f_t, h, f_out = (int(rng.integers(1, max_dim + 1)) for _ in range(4))
    b = int(rng.integers(2, max_batch + 1))
    audio = [rng.standard_normal((int(rng.integers(1, max_frames + 1)), f_a)) for _ in range(b)]
    text = [rng.standard_normal((int(rng.integers(1, max_frames + 1)), f_t)) for _ in range(b)]
    # occasionally let two rows share an audio label, as two captions of one clip would
    labels = [f"l{i}" for i in range(b)]
    if b > 2 and rng.random() < 0.3:
        labels[1] = labels[0]
        audio[1] = audio[0]
    adapters = {"audio": init_adapter(f_a, h, f_out, seed=int(rng.integers(1 << 31))),
                "text": init_adapter(f_t, h, f_out, seed=int(rng.integers(1 << 31)))}
    for a in adapters.values():
        for p in (a.b1, a.b2):
            p += 0.1 * rng.standard_normal(p.shape)
    return adapters, audio, text, labels


def kink_distance(adapters, audio, text, labels, loss="contrastive", policy=PairMiningPolicy.ALL_PAIRS):
    """Distance to the nearest non-differentiable point of the composite.

    That is the smallest ``|pre-activation|`` over hidden units and, for the
    contrastive loss, the smallest ``|s|`` over pairs with different labels
    (``max(0, s)`` bends there and the active-pair count changes).
    """
    policy = PairMiningPolicy(policy)
    pooled_a = np.stack([mean_pool(s) for s in audio])
    pooled_t = np.stack([mean_pool(s) for s in text])
    ya, ca = forward_pooled(adapters["audio"], pooled_a)
    yt, ct = forward_pooled(adapters["text"], pooled_t)
    z = np.vstack([ya, yt])
    norms = np.linalg.norm(z, axis=1)
    dist = min(np.abs(ca.pre).min(), np.abs(ct.pre).min())
    if loss == "contrastive" and norms.min() > 0:
        u = z / norms[:, None]
        sim = u @ u.T
        b = len(labels)
        lab = list(labels) * 2
        for i in range(2 * b):
            for j in range(i + 1, 2 * b):
                if policy is PairMiningPolicy.CROSS_MODAL_ONLY and (i < b) == (j < b):
                    continue
                if lab[i] != lab[j]:
                    dist = min(dist, abs(sim[i, j]))
    return float(dist)


def min_output_norm(adapters, audio, text):
    """Smallest norm among adapted embeddings; cosine curvature grows like 1/norm."""
    ya, _ = forward_pooled(adapters["audio"], np.stack([mean_pool(s) for s in audio]))
    yt, _ = forward_pooled(adapters["text"], np.stack([mean_pool(s) for s in text]))
    return float(np.linalg.norm(np.vstack([ya, yt]), axis=1).min())


def random_composite(rng, loss="contrastive", policy=PairMiningPolicy.ALL_PAIRS, max_dim=8, max_batch=4,
                     max_frames=4, margin=1e-2, min_norm=0.1):
    """Random adapters, sequences and labels for one gradient check.

    Draws closer than ``margin`` to a kink are rejected and redrawn, because
    central differences are meaningless across a kink. So are draws with an
    adapted embedding shorter than ``min_norm``: there the step is no longer
    small relative to the vector being normalized.
    """
    while True:
        draw = _draw(rng, max_dim, max_batch, max_frames)
        if (kink_distance(*draw, loss=loss, policy=policy) > margin
                and min_output_norm(*draw[:3]) > min_norm):
            return draw


def composite_gradient_error(adapters, audio, text, labels, loss="contrastive",
                             policy=PairMiningPolicy.ALL_PAIRS, temperature=0.07):
    """Max relative error of analytic vs central-difference gradients over all adapter parameters."""
    pooled_a = np.stack([mean_pool(s) for s in audio])
    pooled_t = np.stack([mean_pool(s) for s in text])
    a_ad, t_ad = adapters["audio"], adapters["text"]
    n_a = a_ad.flat().size

    def value(vec):
        a, t = a_ad.copy(), t_ad.copy()
        a.set_flat(vec[:n_a])
        t.set_flat(vec[n_a:])
        ya, _ = forward_pooled(a, pooled_a)
        yt, _ = forward_pooled(t, pooled_t)
        return _loss(loss, BatchEmbeddings(ya, yt, labels), policy, temperature).value

    ya, ca = forward_pooled(a_ad, pooled_a)
    yt, ct = forward_pooled(t_ad, pooled_t)
    out = _loss(loss, BatchEmbeddings(ya, yt, labels), policy, temperature)
    grad = np.concatenate([backward(a_ad, ca, out.audio_grad).flat(), backward(t_ad, ct, out.text_grad).flat()])
    x = np.concatenate([a_ad.flat(), t_ad.flat()])
    return check_gradient(value, x, grad)
