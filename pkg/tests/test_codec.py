import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from audiohash.codec import (
    VALID_BITS,
    CodeLengthError,
    HashCode,
    balanced_sign,
    balanced_sign_array,
    center,
    hamming,
    inner_product,
    pack_signs,
    unpack_words,
    ste_gate,
)


def code(bits):
    return HashCode.from_signs(np.asarray(bits))


def random_code(rng, k):
    return code(rng.choice([-1, 1], size=k))


# examples


def test_balanced_sign_examples():
    assert list(balanced_sign([2, 0, -1, 3]).signs) == [1, -1, -1, 1]
    assert list(balanced_sign([5, 5, 5, 5]).signs) == [1, 1, 1, 1]
    assert list(balanced_sign([-1, 1]).signs) == [-1, 1]


def test_balanced_sign_constant_row_with_rounding():
    # float64 means of constant rows can land one ulp above the value
    for x in (0.1, 1 / 3, 0.7, 1e-300, 123.456):
        for k in VALID_BITS:
            assert np.all(balanced_sign_array(np.full(k, x)) == 1)


def test_ste_gate_examples():
    np.testing.assert_array_equal(ste_gate([0.5, -0.3], [0.4, 1.7]), [0.5, 0.0])
    g = np.array([0.1, -2.0, 3.0])
    np.testing.assert_array_equal(ste_gate(g, np.zeros(3)), g)
    np.testing.assert_array_equal(ste_gate([1.0, 2.0], [1.0, -1.0]), [1.0, 2.0])


def test_ste_gate_shape_mismatch():
    with pytest.raises(ValueError):
        ste_gate([1.0, 2.0], [0.0])


def test_inner_product_and_hamming_examples():
    rng = np.random.default_rng(0)
    a = random_code(rng, 64)
    assert inner_product(a, a) == 64
    comp = code(-a.signs)
    assert inner_product(a, comp) == -64
    x, y = code([1, -1, 1, 1]), code([1, 1, -1, 1])
    assert inner_product(x, y) == 0
    assert hamming(x, y) == 2
    assert hamming(x, x) == 0


def test_length_mismatch_raises():
    rng = np.random.default_rng(1)
    with pytest.raises(CodeLengthError):
        hamming(random_code(rng, 16), random_code(rng, 32))
    with pytest.raises(CodeLengthError):
        inner_product(random_code(rng, 64), random_code(rng, 128))


def test_hashcode_rejects_non_signs():
    with pytest.raises(ValueError):
        HashCode.from_signs([1, 0, -1])
    with pytest.raises(ValueError):
        HashCode.from_signs(np.ones((2, 2)))


def test_hashcode_equality_and_hash():
    a = code([1, -1] * 8)
    b = code([1, -1] * 8)
    assert a == b and hash(a) == hash(b)
    assert a != code([-1, 1] * 8)
    assert len({a, b}) == 1


def test_packed_layout_bit_order():
    signs = -np.ones(64, dtype=np.int8)
    signs[0] = 1
    signs[63] = 1
    words = pack_signs(signs)
    assert words.dtype == np.uint64
    assert int(words[0]) == (1 | (1 << 63))


def test_unused_high_bits_zero():
    for k in (16, 32):
        words = pack_signs(np.ones(k, dtype=np.int8))
        assert int(words[0]) == (1 << k) - 1


# properties


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(VALID_BITS), st.integers(0, 2**32 - 1))
def test_pack_roundtrip(k, seed):
    rng = np.random.default_rng(seed)
    s = rng.choice([-1, 1], size=(5, k)).astype(np.int8)
    np.testing.assert_array_equal(unpack_words(pack_signs(s), k), s)
    c = HashCode.from_signs(s[0])
    assert HashCode.from_packed(c.packed, k) == c


def test_hamming_matches_naive_count():
    rng = np.random.default_rng(2)
    for _ in range(2000):
        k = VALID_BITS[rng.integers(4)]
        a = rng.choice([-1, 1], size=k)
        b = rng.choice([-1, 1], size=k)
        d = hamming(code(a), code(b))
        assert d == int(np.sum(a != b))
        assert inner_product(code(a), code(b)) == int(a @ b) == k - 2 * d


def test_balance_on_gaussian_draws():
    rng = np.random.default_rng(3)
    v = rng.standard_normal((1000, 64))
    frac = float(np.mean(balanced_sign_array(v) == 1))
    assert 0.45 <= frac <= 0.55


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, st.sampled_from(VALID_BITS), elements=st.floats(-1e6, 1e6)))
def test_non_constant_vector_has_both_signs(v):
    s = balanced_sign_array(v)
    if np.ptp(v) > 0:
        assert (s == 1).any() and (s == -1).any()
    else:
        assert (s == 1).all()


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 128), elements=st.floats(-1e3, 1e3)))
def test_center_has_zero_mean(v):
    assert abs(center(v).mean()) <= 1e-6
