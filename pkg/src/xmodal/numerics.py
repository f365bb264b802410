"""Dense primitives shared by the adapter, the losses and retrieval.

Everything is computed in float64 regardless of the storage dtype.
"""
import math

import numpy as np

from .errors import NumericalFailure, ShapeError


def mean_pool(seq):
    """Average a ``T x F`` sequence over time, giving an ``F`` vector."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"mean_pool expects a T x F matrix with T >= 1, got shape {seq.shape}")
    return seq.sum(axis=0) / seq.shape[0]


def cosine_similarity_flagged(a, b):
    """Cosine similarity plus a flag that is True when either vector has zero norm.

    Zero-norm inputs give similarity 0 instead of raising.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {a.shape} and {b.shape}")
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0, True
    s = float(a @ b) / (na * nb)
    return min(1.0, max(-1.0, s)), False


def cosine_similarity(a, b):
    return cosine_similarity_flagged(a, b)[0]


def normalize_rows(z):
    """Row-normalize ``z``; returns ``(units, norms)`` with zero rows left at zero."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    safe = np.where(norms > 0.0, norms, 1.0)
    return z / safe[:, None], norms


def cosine_matrix(x, y):
    """All pairwise cosine similarities between rows of ``x`` and rows of ``y``."""
    ux, _ = normalize_rows(x)
    uy, _ = normalize_rows(y)
    return np.clip(ux @ uy.T, -1.0, 1.0)


def unit_backward(units, norms, grad_units):
    """Pull a gradient w.r.t. unit vectors back to the raw vectors.

    For ``u = z / |z|`` this is ``(g - (g . u) u) / |z|``; zero-norm rows get a
    zero gradient.
    """
    radial = np.einsum("ij,ij->i", grad_units, units)
    g = grad_units - radial[:, None] * units
    safe = np.where(norms > 0.0, norms, 1.0)
    g = g / safe[:, None]
    g[norms == 0.0] = 0.0
    return g


def check_gradient(f, x, analytic_grad):
    """Maximum relative error between ``analytic_grad`` and central differences of ``f`` at ``x``.

    The step for coordinate ``i`` is ``1e-4 * max(1, |x_i|)`` and the error for
    that coordinate is ``|num - an| / max(1, |num|, |an|)``.
    """
    x = np.array(x, dtype=np.float64, copy=True).ravel()
    analytic_grad = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if analytic_grad.shape != x.shape:
        raise ShapeError(f"gradient has {analytic_grad.size} entries, parameters have {x.size}")
    worst = 0.0
    for i in range(x.size):
        h = 1e-4 * max(1.0, abs(x[i]))
        orig = x[i]
        x[i] = orig + h
        up = f(x.copy())
        x[i] = orig - h
        down = f(x.copy())
        x[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericalFailure(f"non-finite function value while perturbing coordinate {i}")
        num = (up - down) / (2.0 * h)
        an = analytic_grad[i]
        err = abs(num - an) / max(1.0, abs(num), abs(an))
        worst = max(worst, err)
    return worst
