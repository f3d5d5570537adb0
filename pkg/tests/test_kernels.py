import numpy as np
import pytest

from audiohash import kernels
from audiohash._accel import HAS_NUMBA

BACKENDS = [
    pytest.param((kernels.hamming_scan_numpy, kernels.topk_order_numpy, kernels.radius_order_numpy), id="numpy"),
    pytest.param(
        (kernels.hamming_scan_numba, kernels.topk_order_numba, kernels.radius_order_numba),
        id="numba",
        marks=pytest.mark.skipif(not HAS_NUMBA, reason="numba disabled"),
    ),
]


def naive_distances(codes, query):
    bits_c = np.unpackbits(codes.view(np.uint8), axis=1)
    bits_q = np.unpackbits(query.view(np.uint8))
    return (bits_c != bits_q).sum(axis=1)


def naive_order(d, limit):
    return sorted(range(d.size), key=lambda r: (d[r], r))[:limit]


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("words", [1, 2])
def test_scan_matches_naive(backend, words):
    scan, _, _ = backend
    rng = np.random.default_rng(words)
    codes = rng.integers(0, 2**63, size=(300, words), dtype=np.uint64) * np.uint64(2) + rng.integers(0, 2, size=(300, words), dtype=np.uint64)
    q = codes[7].copy()
    d = scan(codes, q)
    assert d.dtype == np.int64
    np.testing.assert_array_equal(d, naive_distances(codes, q))
    assert d[7] == 0


@pytest.mark.parametrize("backend", BACKENDS)
def test_topk_and_radius_order_with_ties(backend):
    _, topk, radius = backend
    rng = np.random.default_rng(5)
    d = rng.integers(0, 6, size=500).astype(np.int64)
    for k in (1, 3, 50, 499, 500, 800):
        assert list(topk(d, k, 64)) == naive_order(d, k)
    for r in range(0, 7):
        expect = [i for i in naive_order(d, d.size) if d[i] <= r]
        assert list(radius(d, r)) == expect


@pytest.mark.parametrize("backend", BACKENDS)
def test_empty_inputs(backend):
    scan, topk, radius = backend
    codes = np.zeros((0, 1), dtype=np.uint64)
    assert scan(codes, np.zeros(1, dtype=np.uint64)).size == 0
    empty = np.zeros(0, dtype=np.int64)
    assert topk(empty, 5, 64).size == 0
    assert radius(empty, 2).size == 0


def test_backends_agree():
    rng = np.random.default_rng(9)
    codes = rng.integers(0, 2**64, size=(1000, 2), dtype=np.uint64)
    q = rng.integers(0, 2**64, size=2, dtype=np.uint64)
    a = kernels.hamming_scan_numpy(codes, q)
    b = kernels.hamming_scan_numba(codes, q)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(kernels.topk_order_numpy(a, 37, 128), kernels.topk_order_numba(b, 37, 128))


def test_benchmark_script_runs(capsys):
    import importlib.util
    from pathlib import Path

    path = Path(__file__).parents[1] / "benchmarks" / "bench_scan.py"
    spec = importlib.util.spec_from_file_location("bench_scan", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    mod.main(["--n", "500", "--k", "10", "--repeats", "1"])
    out = capsys.readouterr().out
    assert "hamming-numpy" in out and "float32-euclidean" in out
