"""Immutable packed-code retrieval index with exact linear Hamming scan.

Index file layout (``AIDX``, little-endian)::

    magic "AIDX" | version u32 | K u32 | N u64
    label table: count u32, names (u16 len + UTF-8)
    ids: N x (u16 len + UTF-8)
    labels: N x u32
    codes: N x ceil(K/64) u64, row-major
    checksum u64 (blake2b-64 of every preceding byte)
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from ._binio import ChecksumError, FormatError, Reader, Writer, checksum64
from .codec import CodeLengthError, HashCode, check_bits, n_words, pack_signs, unpack_words

INDEX_MAGIC = b"AIDX"
INDEX_VERSION = 1


class Hit(NamedTuple):
    row: int
    distance: int
    id: str
    label: int


@dataclass(frozen=True, eq=False)
class RetrievalIndex:
    n_bits: int
    codes: np.ndarray  # (N, W) uint64, read-only
    ids: tuple
    labels: np.ndarray  # (N,) int64, read-only
    label_names: tuple = ()

    def __len__(self):
        return int(self.codes.shape[0])

    def code(self, row: int) -> HashCode:
        return HashCode.from_packed(self.codes[row], self.n_bits)

    def signs(self) -> np.ndarray:
        return unpack_words(self.codes, self.n_bits) if len(self) else np.zeros((0, self.n_bits), np.int8)

    def subset(self, rows) -> "RetrievalIndex":
        rows = np.asarray(rows, dtype=np.int64)
        return _make_index(self.n_bits, self.codes[rows], [self.ids[r] for r in rows], self.labels[rows], self.label_names)

    def same_as(self, other: "RetrievalIndex") -> bool:
        return (
            self.n_bits == other.n_bits
            and np.array_equal(self.codes, other.codes)
            and self.ids == other.ids
            and np.array_equal(self.labels, other.labels)
            and self.label_names == other.label_names
        )

    def _query_words(self, query) -> np.ndarray:
        if isinstance(query, HashCode):
            if query.n_bits != self.n_bits:
                raise CodeLengthError(f"query has K={query.n_bits}, index has K={self.n_bits}")
            return np.ascontiguousarray(query.packed, dtype=np.uint64)
        words = np.ascontiguousarray(query, dtype=np.uint64)
        if words.shape != (n_words(self.n_bits),):
            raise CodeLengthError(f"packed query of shape {words.shape} does not fit K={self.n_bits}")
        return words

    def distances(self, query) -> np.ndarray:
        return kernels.hamming_scan(self.codes, self._query_words(query))

    def topk_rows(self, query, k: int):
        """``(rows, distances)`` of the k nearest rows, ordered by (distance, row)."""
        if k < 1:
            raise ValueError("k must be >= 1")
        d = self.distances(query)
        rows = kernels.topk_order(d, k, self.n_bits)
        return rows, d[rows]

    def radius_rows(self, query, r: int):
        if not 0 <= r <= self.n_bits:
            raise ValueError(f"radius must lie in [0, {self.n_bits}]")
        d = self.distances(query)
        rows = kernels.radius_order(d, r)
        return rows, d[rows]

    def _hits(self, rows, dists):
        return [Hit(int(r), int(d), self.ids[r], int(self.labels[r])) for r, d in zip(rows, dists)]


def _make_index(n_bits, codes, ids, labels, label_names) -> RetrievalIndex:
    codes = np.ascontiguousarray(codes, dtype=np.uint64).reshape(-1, n_words(n_bits))
    labels = np.ascontiguousarray(labels, dtype=np.int64).reshape(-1)
    codes.setflags(write=False)
    labels.setflags(write=False)
    if not (codes.shape[0] == len(ids) == labels.shape[0]):
        raise ValueError(f"inconsistent lengths: {codes.shape[0]} codes, {len(ids)} ids, {labels.shape[0]} labels")
    return RetrievalIndex(n_bits, codes, tuple(ids), labels, tuple(label_names))


def build_index(codes, ids, labels, label_names=(), n_bits: int | None = None) -> RetrievalIndex:
    """Build from a list of :class:`HashCode` or an ``(N, K)`` array of +1/-1."""
    if isinstance(codes, np.ndarray) and codes.ndim == 2:
        k = codes.shape[1] if n_bits is None else n_bits
        check_bits(k)
        if codes.shape[1] != k:
            raise CodeLengthError("sign matrix width differs from n_bits")
        packed = pack_signs(codes) if codes.shape[0] else np.zeros((0, n_words(k)), np.uint64)
        return _make_index(k, packed, ids, labels, label_names)
    codes = list(codes)
    if not codes:
        if n_bits is None:
            raise ValueError("an empty index needs an explicit n_bits")
        return _make_index(check_bits(n_bits), np.zeros((0, n_words(n_bits)), np.uint64), ids, labels, label_names)
    k = codes[0].n_bits
    if any(c.n_bits != k for c in codes) or (n_bits is not None and n_bits != k):
        raise CodeLengthError("all codes in an index must share one K")
    check_bits(k)
    return _make_index(k, np.stack([c.packed for c in codes]), ids, labels, label_names)


def search_topk(index: RetrievalIndex, query, k: int):
    rows, dists = index.topk_rows(query, k)
    return index._hits(rows, dists)


def search_radius(index: RetrievalIndex, query, r: int):
    rows, dists = index.radius_rows(query, r)
    return index._hits(rows, dists)


def index_bytes(index: RetrievalIndex) -> bytes:
    w = Writer()
    w.raw(INDEX_MAGIC)
    w.u32(INDEX_VERSION)
    w.u32(index.n_bits)
    w.u64(len(index))
    w.u32(len(index.label_names))
    for name in index.label_names:
        w.str16(name)
    for i in index.ids:
        w.str16(i)
    w.array(index.labels, "<u4")
    w.array(index.codes, "<u8")
    body = w.getvalue()
    return body + checksum64(body).to_bytes(8, "little")


def save_index(index: RetrievalIndex, path) -> None:
    with open(path, "wb") as fh:
        fh.write(index_bytes(index))


def load_index(path) -> RetrievalIndex:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8:
        raise FormatError("truncated index file")
    body, tail = data[:-8], data[-8:]
    r = Reader(body, "index")
    r.expect_magic(INDEX_MAGIC)
    r.expect_version(INDEX_VERSION)
    if int.from_bytes(tail, "little") != checksum64(body):
        raise ChecksumError("index checksum mismatch")
    k = r.u32()
    try:
        check_bits(k)
    except ValueError as e:
        raise FormatError(str(e)) from e
    n = r.u64()
    names = [r.str16() for _ in range(r.u32())]
    ids = [r.str16() for _ in range(n)]
    labels = r.array(n, "<u4").astype(np.int64)
    codes = r.array(n * n_words(k), "<u8").astype(np.uint64).reshape(n, n_words(k))
    if not r.at_end():
        raise FormatError("trailing bytes in index body")
    if k % 64 and n and np.any(codes[:, -1] >> np.uint64(k % 64)):
        raise FormatError("index codes have bits set beyond K")
    return _make_index(k, codes, ids, labels, names)
