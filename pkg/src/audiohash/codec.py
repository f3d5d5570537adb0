"""Balanced binarization, the straight-through gate, and packed hash codes.

Packed layout: ``ceil(K / 64)`` little-endian 64-bit words. Bit ``b`` of the
concatenated word stream (word ``b // 64``, bit ``b % 64`` counted from the
least significant end) is set iff coordinate ``b`` of the code is ``+1``.
Unused high bits of the last word are zero.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

VALID_BITS = (16, 32, 64, 128)


class CodeLengthError(ValueError):
    """Two codes (or a code and an index) disagree on K."""


def n_words(n_bits: int) -> int:
    return (n_bits + 63) // 64


def check_bits(n_bits: int) -> int:
    if n_bits not in VALID_BITS:
        raise ValueError(f"hash length must be one of {VALID_BITS}, got {n_bits}")
    return n_bits


def pack_signs(signs: np.ndarray) -> np.ndarray:
    """Pack a ``(K,)`` or ``(N, K)`` array of +1/-1 into uint64 words."""
    signs = np.asarray(signs)
    squeeze = signs.ndim == 1
    bits = np.atleast_2d(signs) > 0
    n, k = bits.shape
    w = n_words(k)
    padded = np.zeros((n, w * 64), dtype=bool)
    padded[:, :k] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    words = np.ascontiguousarray(packed).view("<u8").astype(np.uint64).reshape(n, w)
    return words[0] if squeeze else words


def unpack_words(words: np.ndarray, n_bits: int) -> np.ndarray:
    """Inverse of :func:`pack_signs`; returns int8 +1/-1."""
    words = np.asarray(words, dtype=np.uint64)
    squeeze = words.ndim == 1
    words = np.atleast_2d(words)
    raw = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :n_bits]
    signs = np.where(bits == 1, 1, -1).astype(np.int8)
    return signs[0] if squeeze else signs


@dataclass(frozen=True, eq=False)
class HashCode:
    signs: np.ndarray
    packed: np.ndarray

    @classmethod
    def from_signs(cls, signs) -> "HashCode":
        s = np.asarray(signs)
        if s.ndim != 1 or not np.all(np.abs(s) == 1):
            raise ValueError("signs must be a 1-D vector of +1/-1")
        s = s.astype(np.int8)
        s.setflags(write=False)
        p = pack_signs(s)
        p.setflags(write=False)
        return cls(s, p)

    @classmethod
    def from_packed(cls, words, n_bits: int) -> "HashCode":
        return cls.from_signs(unpack_words(words, n_bits))

    @property
    def n_bits(self) -> int:
        return int(self.signs.shape[0])

    def __eq__(self, other):
        if not isinstance(other, HashCode):
            return NotImplemented
        return self.n_bits == other.n_bits and bool(np.array_equal(self.packed, other.packed))

    def __hash__(self):
        return hash((self.n_bits, self.packed.tobytes()))

    def __repr__(self):
        bits = "".join("1" if s > 0 else "0" for s in self.signs)
        return f"HashCode(K={self.n_bits}, bits={bits})"


def balanced_sign_array(v: np.ndarray) -> np.ndarray:
    """Row-wise mean-threshold sign of a ``(K,)`` or ``(B, K)`` array.

    Entries equal to their row mean map to +1.
    """
    v = np.asarray(v, dtype=np.float64)
    # rounding can push the mean of a constant row above its value
    mean = np.clip(v.mean(axis=-1, keepdims=True), v.min(axis=-1, keepdims=True), v.max(axis=-1, keepdims=True))
    return np.where(v >= mean, 1, -1).astype(np.int8)


def balanced_sign(v_h) -> HashCode:
    v = np.asarray(v_h, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("balanced_sign expects a single activation vector")
    return HashCode.from_signs(balanced_sign_array(v))


def center(v_h: np.ndarray) -> np.ndarray:
    v = np.asarray(v_h, dtype=np.float64)
    return v - v.mean(axis=-1, keepdims=True)


def hard_tanh(u: np.ndarray) -> np.ndarray:
    return np.clip(u, -1.0, 1.0)


def ste_gate(grad_c, centered) -> np.ndarray:
    """Straight-through gradient of the sign: pass ``grad_c`` where ``|u| <= 1``."""
    g = np.asarray(grad_c, dtype=np.float64)
    u = np.asarray(centered, dtype=np.float64)
    if g.shape != u.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {u.shape}")
    return np.where(np.abs(u) <= 1.0, g, 0.0)


def _check_pair(a: HashCode, b: HashCode) -> None:
    if a.n_bits != b.n_bits:
        raise CodeLengthError(f"code length mismatch: {a.n_bits} vs {b.n_bits}")


def hamming(a: HashCode, b: HashCode) -> int:
    _check_pair(a, b)
    return int(kernels.hamming_scan(a.packed[None, :], b.packed)[0])


def inner_product(a: HashCode, b: HashCode) -> int:
    """Signed inner product ``sum(a_i * b_i)``, computed as ``K - 2 * hamming``."""
    return a.n_bits - 2 * hamming(a, b)
