"""Text-to-audio ranking, Recall@k / mAP@k and jackknife confidence intervals."""
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .errors import EmptyIndex, InsufficientData, InvalidGroundTruth, ShapeError
from .numerics import normalize_rows

REPORT_COLUMNS = ("metric", "value", "ci_low", "ci_high", "n")
METRICS = ("recall@1", "recall@5", "recall@10", "map@10")


class AudioIndex:
    """Immutable set of adapted audio embeddings keyed by unique audio id."""

    def __init__(self, ids, vectors):
        ids = tuple(str(i) for i in ids)
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise ShapeError(f"{len(ids)} ids for vectors of shape {vectors.shape}")
        if len(set(ids)) != len(ids):
            raise ShapeError("audio ids in an index must be unique")
        vectors.setflags(write=False)
        self.ids = ids
        self.vectors = vectors
        order = sorted(range(len(ids)), key=ids.__getitem__)
        tie = np.empty(len(ids), dtype=np.int64)
        tie[order] = np.arange(len(ids))
        tie.setflags(write=False)
        self.tie_order = tie
        self._pos = {aid: i for i, aid in enumerate(ids)}
        self._units = normalize_rows(vectors)[0] if len(ids) else vectors

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def position(self, audio_id):
        return self._pos[audio_id]

    def similarities(self, queries):
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if queries.shape[1] != self.dim:
            raise ShapeError(f"query dimension {queries.shape[1]} != index dimension {self.dim}")
        units, _ = normalize_rows(queries)
        return np.clip(units @ self._units.T, -1.0, 1.0)


@dataclass
class RankedResult:
    query_id: str
    ranking: list
    relevant_ids: frozenset = field(default_factory=frozenset)

    def ids(self):
        return [aid for aid, _ in self.ranking]


def rank(index, query, k=None):
    """Index entries by descending cosine similarity to ``query``.

    Ties go to the smaller audio id. ``k=None`` returns the full ranking.
    """
    if len(index) == 0:
        raise EmptyIndex("cannot rank against an empty index")
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1:
        raise ShapeError(f"query must be a vector, got shape {query.shape}")
    sims = index.similarities(query)[0]
    order = np.lexsort((index.tie_order, -sims))
    if k is not None:
        order = order[:max(0, int(k))]
    return [(index.ids[i], float(sims[i])) for i in order]


def _check(results, k):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    for r in results:
        if not r.relevant_ids:
            raise InvalidGroundTruth(f"query {r.query_id!r} has no relevant items")


def recall_scores(results, k):
    """Per-query |relevant in top-k| / |relevant|."""
    _check(results, k)
    out = np.empty(len(results))
    for q, r in enumerate(results):
        top = set(r.ids()[:k])
        out[q] = len(top & r.relevant_ids) / len(r.relevant_ids)
    return out


def average_precision_scores(results, k=10):
    """Per-query AP@k normalized by ``min(|relevant|, k)``."""
    _check(results, k)
    out = np.empty(len(results))
    for q, r in enumerate(results):
        hits = 0
        total = 0.0
        for pos, aid in enumerate(r.ids()[:k], 1):
            if aid in r.relevant_ids:
                hits += 1
                total += hits / pos
        out[q] = total / min(len(r.relevant_ids), k)
    return out


def recall_at_k(results, k):
    return float(np.mean(recall_scores(results, k))) if results else 0.0


def map_at_k(results, k=10):
    return float(np.mean(average_precision_scores(results, k))) if results else 0.0


def t_critical(df, confidence=0.95):
    return float(stats.t.ppf(0.5 + confidence / 2.0, df))


def jackknife_ci(scores, confidence=0.95, clip=True):
    """Leave-one-out jackknife interval for the mean of ``scores``.

    The half-width is ``t * sqrt((n-1)/n * sum((theta_i - mean(theta))**2))``
    with ``theta_i`` the mean without score ``i`` and ``t`` the two-sided
    Student-t quantile with ``n - 1`` degrees of freedom.

    >>> jackknife_ci([0.0, 1.0], clip=False)  # doctest: +ELLIPSIS
    (-5.85..., 6.85...)
    """
    x = np.asarray(scores, dtype=np.float64)
    n = x.size
    if n < 2:
        raise InsufficientData(f"jackknife needs at least 2 scores, got {n}")
    center = float(x.mean())
    theta = (x.sum() - x) / (n - 1)
    se = math.sqrt((n - 1) / n * float(np.sum((theta - theta.mean()) ** 2)))
    half = t_critical(n - 1, confidence) * se
    low, high = center - half, center + half
    if clip:
        low, high = max(0.0, low), min(1.0, high)
    return low, high


def relevant_ranks(index, queries, relevant_ids):
    """1-based rank of each query's single relevant audio (fast path, no sorting)."""
    sims = index.similarities(queries)
    rel = np.array([index.position(a) for a in relevant_ids], dtype=np.int64)
    return kernels.relevant_ranks(np.ascontiguousarray(sims), rel, np.asarray(index.tie_order))


def map_from_ranks(ranks, k=10):
    ranks = np.asarray(ranks)
    return float(np.mean(np.where(ranks <= k, 1.0 / ranks, 0.0)))


@dataclass
class MetricReport:
    values: dict
    intervals: dict
    n: int

    def rows(self):
        for m in METRICS:
            low, high = self.intervals[m]
            yield m, self.values[m], low, high, self.n

    def to_tsv(self):
        lines = ["\t".join(REPORT_COLUMNS)]
        for m, v, low, high, n in self.rows():
            lines.append(f"{m}\t{v:.3f}\t{low:.3f}\t{high:.3f}\t{n}")
        return "\n".join(lines) + "\n"

    def to_json(self):
        rows = [dict(zip(REPORT_COLUMNS, row)) for row in self.rows()]
        return json.dumps({"metrics": rows, "n": self.n}, indent=2) + "\n"


def metric_report(results, confidence=0.95):
    per_query = {
        "recall@1": recall_scores(results, 1),
        "recall@5": recall_scores(results, 5),
        "recall@10": recall_scores(results, 10),
        "map@10": average_precision_scores(results, 10),
    }
    values = {m: float(s.mean()) for m, s in per_query.items()}
    intervals = {m: jackknife_ci(s, confidence) for m, s in per_query.items()}
    return MetricReport(values, intervals, len(results))


def rank_queries(index, query_ids, queries, relevant, k=None):
    """RankedResult for every query row; ``relevant`` is a list of id sets."""
    sims = index.similarities(queries)
    out = []
    for q, qid in enumerate(query_ids):
        order = np.lexsort((index.tie_order, -sims[q]))
        if k is not None:
            order = order[:k]
        ranking = [(index.ids[i], float(sims[q, i])) for i in order]
        out.append(RankedResult(str(qid), ranking, frozenset(relevant[q])))
    return out
