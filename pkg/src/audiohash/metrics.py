"""Retrieval metrics and the evaluation driver.

AP@k normalizes by ``min(R, k)`` where ``R`` is the number of relevant
database items for the query; a query with ``R = 0`` scores 0. Precision
within a Hamming radius scores 0 when nothing falls inside the radius.
"""

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .codec import CodeLengthError, balanced_sign_array, pack_signs
from .encoder import EncoderParams, encode_batch


@dataclass
class RelevanceList:
    flags: np.ndarray
    total_relevant: int

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=np.int64)


def precision_at_k(flags, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    flags = np.asarray(flags)[:k]
    if flags.size == 0:
        return 0.0
    return float(flags.sum() / flags.size)


def average_precision(flags, total_relevant: int, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    flags = np.asarray(flags, dtype=np.float64)[:k]
    denom = min(total_relevant, k)
    if denom <= 0 or flags.size == 0:
        return 0.0
    hits = np.cumsum(flags)
    ranks = np.arange(1, flags.size + 1)
    return float(np.sum(flags * hits / ranks) / denom)


def mean_average_precision(queries, k: int) -> float:
    queries = list(queries)
    if not queries:
        raise ValueError("mean average precision needs at least one query")
    return float(math.fsum(average_precision(q.flags, q.total_relevant, k) for q in queries) / len(queries))


def precision_hamming_radius(flags) -> float:
    flags = np.asarray(flags)
    if flags.size == 0:
        return 0.0
    return float(flags.sum() / flags.size)


def random_ranking_map(relevant_counts, db_size: int) -> float:
    """Expected AP over a full random ranking, averaged over queries.

    For ``R`` relevant items among ``N``, each relevant item sits at a uniform
    rank and ``E[AP] = (H_N + (R - 1) / (N - 1) * (N - H_N)) / N``.
    """
    n = db_size
    h = math.fsum(1.0 / i for i in range(1, n + 1))
    vals = []
    for r in relevant_counts:
        if r <= 0:
            vals.append(0.0)
        elif n == 1:
            vals.append(1.0)
        else:
            vals.append((h + (r - 1) / (n - 1) * (n - h)) / n)
    return float(np.mean(vals))


# --------------------------------------------------------------------------
# evaluation driver

@dataclass
class QueryResult:
    query_id: str
    ap: float
    precision_at_k: float
    radius2_precision: float


@dataclass
class EvalReport:
    bits: int
    rows: list = field(default_factory=list)  # (metric, bits, k, value)
    per_query: list = field(default_factory=list)  # QueryResult at the first k
    notes: dict = field(default_factory=dict)

    def value(self, metric: str, k) -> float:
        for m, _, kk, v in self.rows:
            if m == metric and kk == k:
                return v
        raise KeyError((metric, k))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "bits", "k", "value"])
            for m, b, k, v in self.rows:
                w.writerow([m, b, k, f"{v:.6f}"])

    def write_per_query(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["query_id", "ap", "precision_at_k", "radius2_precision"])
            for q in self.per_query:
                w.writerow([q.query_id, f"{q.ap:.6f}", f"{q.precision_at_k:.6f}", f"{q.radius2_precision:.6f}"])


def relevance_for_query(index, query_words, query_label: int, k: int, exclude_rows=(), radius: int = 2):
    """Rank the index for one query, skipping ``exclude_rows`` (the query's own entries).

    Returns ``(RelevanceList over the top k, radius flags)``.
    """
    excl = np.asarray(exclude_rows, dtype=np.int64)
    rows, _ = index.topk_rows(query_words, max(min(k + excl.size, len(index)), 1))
    rrows, _ = index.radius_rows(query_words, radius)
    rel_mask = index.labels == query_label
    total = int(rel_mask.sum())
    if excl.size:
        rows = rows[~np.isin(rows, excl)]
        rrows = rrows[~np.isin(rrows, excl)]
        total -= int(rel_mask[excl].sum())
    rows = rows[:k]
    return RelevanceList(rel_mask[rows].astype(np.int64), total), rel_mask[rrows].astype(np.int64)


def evaluate_codes(index, query_codes, query_labels, query_ids, ks, exclude_self: bool = True, radius: int = 2) -> EvalReport:
    """Metrics for pre-computed query codes (``(Q, K)`` signs) against ``index``.

    ``ks`` may contain ``"all"`` for the full-database ranking.
    """
    if len(query_labels) == 0:
        raise ValueError("evaluation needs at least one query")
    words = pack_signs(np.asarray(query_codes))
    id_rows = defaultdict(list)
    if exclude_self:
        for r, i in enumerate(index.ids):
            id_rows[i].append(r)
    report = EvalReport(bits=index.n_bits)
    radius_prec = []
    first = True
    for k_spec in ks:
        k = len(index) if k_spec == "all" else int(k_spec)
        k = max(k, 1)
        rels = []
        for q in range(len(query_labels)):
            excl = id_rows.get(query_ids[q], ())
            rel, rflags = relevance_for_query(index, words[q], int(query_labels[q]), k, excl, radius)
            rels.append(rel)
            if first:
                radius_prec.append(precision_hamming_radius(rflags))
                report.per_query.append(
                    QueryResult(query_ids[q], average_precision(rel.flags, rel.total_relevant, k), precision_at_k(rel.flags, k), radius_prec[-1])
                )
        report.rows.append(("map", index.n_bits, k_spec, mean_average_precision(rels, k)))
        report.rows.append(("precision", index.n_bits, k_spec, float(np.mean([precision_at_k(r.flags, k) for r in rels]))))
        first = False
    report.rows.append((f"precision_radius{radius}", index.n_bits, radius, float(np.mean(radius_prec))))
    return report


def evaluate(params: EncoderParams, index, queries, ks=(100, "all"), exclude_self: bool = True) -> EvalReport:
    """Encode ``queries`` (FeatureTensors), search ``index`` and compute the metric table."""
    if params.hash_bits != index.n_bits:
        raise CodeLengthError(f"model K={params.hash_bits} but index K={index.n_bits}")
    v = encode_batch(params, [q.channels for q in queries])
    codes = balanced_sign_array(v)
    return evaluate_codes(index, codes, [q.label for q in queries], [q.clip_id for q in queries], ks, exclude_self)
