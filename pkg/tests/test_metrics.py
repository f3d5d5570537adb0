import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from audiohash.index import build_index
from audiohash.metrics import (
    EvalReport,
    RelevanceList,
    average_precision,
    evaluate_codes,
    mean_average_precision,
    precision_at_k,
    precision_hamming_radius,
    random_ranking_map,
)


def test_precision_examples():
    assert precision_at_k([1, 0, 1], 3) == pytest.approx(2 / 3)
    assert precision_at_k([1, 1, 1], 2) == 1.0
    assert precision_at_k([0, 0, 1], 2) == 0.0
    assert precision_at_k([], 5) == 0.0
    with pytest.raises(ValueError):
        precision_at_k([1], 0)


def test_ap_examples():
    assert average_precision([1, 0, 1], 2, 3) == pytest.approx((1 + 2 / 3) / 2)
    assert average_precision([1, 1], 2, 2) == 1.0
    assert average_precision([0, 1], 1, 2) == 0.5
    assert average_precision([0, 0], 0, 2) == 0.0
    with pytest.raises(ValueError):
        average_precision([1], 1, 0)


def test_map_examples():
    qs = [RelevanceList([1, 1], 2), RelevanceList([0, 1], 1)]
    assert mean_average_precision(qs, 2) == 0.75
    assert mean_average_precision(qs[1:], 2) == 0.5
    with pytest.raises(ValueError):
        mean_average_precision([], 2)


def test_radius_precision_examples():
    assert precision_hamming_radius([1, 0]) == 0.5
    assert precision_hamming_radius([]) == 0.0
    assert precision_hamming_radius([1, 1, 1]) == 1.0


def test_random_baseline_matches_exact_enumeration():
    for n in (1, 2, 7, 30):
        for r in range(0, n + 1):
            assert random_ranking_map([r], n) == pytest.approx(oracles.random_map([r], n), rel=1e-12, abs=1e-15)
    assert random_ranking_map([3, 5, 0], 20) == pytest.approx(oracles.random_map([3, 5, 0], 20), rel=1e-12)


def test_random_baseline_monte_carlo():
    rng = np.random.default_rng(0)
    n, r = 40, 6
    flags = np.zeros(n, dtype=int)
    flags[:r] = 1
    sims = [average_precision(rng.permutation(flags), r, n) for _ in range(20000)]
    assert np.mean(sims) == pytest.approx(random_ranking_map([r], n), abs=0.005)


def brute_force_report(db, db_labels, db_ids, qs, q_labels, q_ids, k):
    rows_all = []
    for q in range(len(qs)):
        skip = {r for r, i in enumerate(db_ids) if i == q_ids[q]}
        order, _ = oracles.rank(db, qs[q], skip)
        flags = [int(db_labels[r] == q_labels[q]) for r in order]
        total = sum(1 for r in range(len(db)) if r not in skip and db_labels[r] == q_labels[q])
        rows_all.append((
            oracles.ap(flags, total, k),
            oracles.precision(flags, k),
            oracles.radius_precision(db, db_labels, qs[q], q_labels[q], 2, skip),
        ))
    return rows_all


def test_evaluate_codes_matches_brute_force():
    rng = np.random.default_rng(1)
    for trial in range(20):
        k_bits = int(rng.choice([16, 32]))
        n = int(rng.integers(1, 120))
        n_q = int(rng.integers(1, 15))
        # few distinct codes so ties and radius hits are common
        pool = rng.choice([-1, 1], size=(6, k_bits))
        db = pool[rng.integers(0, 6, size=n)] * np.where(rng.random((n, k_bits)) < 0.05, -1, 1)
        labels = rng.integers(0, 4, size=n)
        ids = [f"d{i}" for i in range(n)]
        q_rows = rng.integers(0, n, size=n_q)
        qs = db[q_rows]
        q_labels = labels[q_rows]
        q_ids = [ids[r] if rng.random() < 0.5 else f"q{j}" for j, r in enumerate(q_rows)]
        k = int(rng.integers(1, 2 * n + 2))
        index = build_index(db.astype(np.int8), ids, labels)
        report = evaluate_codes(index, qs, q_labels, q_ids, (k,))
        ref = brute_force_report(db.tolist(), labels.tolist(), ids, qs.tolist(), q_labels.tolist(), q_ids, k)
        assert report.value("map", k) == pytest.approx(math.fsum(r[0] for r in ref) / n_q, rel=1e-12, abs=1e-12)
        assert report.value("precision", k) == pytest.approx(math.fsum(r[1] for r in ref) / n_q, rel=1e-12, abs=1e-12)
        assert report.value("precision_radius2", 2) == pytest.approx(math.fsum(r[2] for r in ref) / n_q, rel=1e-12, abs=1e-12)
        for got, want in zip(report.per_query, ref):
            assert got.ap == pytest.approx(want[0], rel=1e-12, abs=1e-12)


def test_identical_class_codes_give_perfect_map():
    rng = np.random.default_rng(2)
    protos = rng.choice([-1, 1], size=(4, 32))
    labels = np.repeat(np.arange(4), 10)
    db = protos[labels].astype(np.int8)
    index = build_index(db, [f"i{n}" for n in range(40)], labels)
    report = evaluate_codes(index, db, labels, [f"i{n}" for n in range(40)], (100, "all"))
    assert report.value("map", 100) == 1.0
    assert report.value("map", "all") == 1.0
    assert report.value("precision_radius2", 2) == 1.0


def test_self_exclusion_with_singleton_classes():
    rng = np.random.default_rng(3)
    db = rng.choice([-1, 1], size=(5, 16)).astype(np.int8)
    labels = np.arange(5)
    ids = [f"x{i}" for i in range(5)]
    report = evaluate_codes(build_index(db, ids, labels), db, labels, ids, (3,))
    # every query's only relevant item is itself, so nothing relevant remains
    assert report.value("map", 3) == 0.0
    assert report.value("precision", 3) == 0.0


def test_report_csv_and_determinism(tmp_path):
    rng = np.random.default_rng(4)
    db = rng.choice([-1, 1], size=(30, 16)).astype(np.int8)
    labels = rng.integers(0, 3, size=30)
    idx = build_index(db, [str(i) for i in range(30)], labels)
    a = evaluate_codes(idx, db[:5], labels[:5], ["0", "1", "2", "3", "4"], (10, "all"))
    b = evaluate_codes(idx, db[:5], labels[:5], ["0", "1", "2", "3", "4"], (10, "all"))
    assert a.rows == b.rows
    a.write_csv(tmp_path / "r.csv")
    a.write_per_query(tmp_path / "q.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "metric,bits,k,value"
    assert {l.split(",")[0] for l in lines[1:]} == {"map", "precision", "precision_radius2"}
    assert "map,16,all," in (tmp_path / "r.csv").read_text()
    assert (tmp_path / "q.csv").read_text().splitlines()[0] == "query_id,ap,precision_at_k,radius2_precision"
    assert len((tmp_path / "q.csv").read_text().splitlines()) == 6


def test_evaluate_needs_queries():
    idx = build_index(np.ones((2, 16), np.int8), ["a", "b"], [0, 0])
    with pytest.raises(ValueError):
        evaluate_codes(idx, np.ones((0, 16)), [], [], (1,))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=60), st.integers(1, 70), st.data())
def test_metrics_bounded_and_promotion_never_hurts(flags, k, data):
    total = sum(flags) + data.draw(st.integers(0, 5))
    ap = average_precision(flags, total, k)
    assert 0.0 <= ap <= 1.0
    assert 0.0 <= precision_at_k(flags, k) <= 1.0
    swaps = [i for i in range(len(flags) - 1) if flags[i] == 0 and flags[i + 1] == 1]
    if swaps:
        i = data.draw(st.sampled_from(swaps))
        better = list(flags)
        better[i], better[i + 1] = 1, 0
        assert average_precision(better, total, k) >= ap - 1e-15


def test_value_lookup():
    r = EvalReport(bits=16, rows=[("map", 16, 100, 0.5)])
    assert r.value("map", 100) == 0.5
    with pytest.raises(KeyError):
        r.value("map", "all")


def test_query_outside_database_keeps_all_rows():
    idx = build_index(np.ones((2, 16), np.int8), ["a", "b"], [0, 1])
    rep = evaluate_codes(idx, np.ones((1, 16)), [0], ["zz"], (2,))
    assert rep.value("map", 2) == 1.0
    assert rep.value("precision", 2) == 0.5
