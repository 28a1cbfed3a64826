"""
HashPrune: a bounded, order-independent candidate reservoir per point.

Every point p owns at most `capacity` slots. A slot holds a candidate id,
the residual hash of that candidate relative to p and its dissimilarity to
p stored as bfloat16, 8 bytes in all. Slots stay sorted by hash; each hash
bucket keeps only its closest candidate. When the reservoir is full a new
hash can only enter by evicting the furthest slot, and only if it is closer.

The kept contents depend on the set of candidates offered, never on the
order they arrive in, which makes concurrent streaming safe as long as each
reservoir is written by one thread at a time.
"""
import logging
from dataclasses import dataclass

import numba
import numpy as np

from annindex.constants import DEFAULT_HASH_BITS, MAX_HASH_BITS, DEFAULT_RESERVOIR, SLOT_BYTES
from annindex.exceptions import UsageError, ReservoirAllocationError
from annindex.utils import rng_for, to_bfloat16, from_bfloat16, bf16_order_key, chunks

logger = logging.getLogger(__name__)

INSERTED, REPLACED, EVICTED, REJECTED = 0, 1, 2, 3
OUTCOMES = ("inserted", "replaced", "evicted", "rejected")

_HYPERPLANE_STREAM = 17
SKETCH_CHUNK = 65536


@dataclass(frozen=True)
class HashParams:
    bits: int = DEFAULT_HASH_BITS
    reservoir: int = DEFAULT_RESERVOIR

    def __post_init__(self):
        if not 1 <= self.bits <= MAX_HASH_BITS:
            raise UsageError(f"hash bits must lie in [1, {MAX_HASH_BITS}], got {self.bits}")
        if self.reservoir < 1:
            raise UsageError("reservoir capacity must be at least 1")


def residual_hashes(sketch_p, sketch_c):
    """ Residual hash of candidate c relative to p, from their sketches.

        Bit i is set iff <c - p, H_i> >= 0; H_1 maps to the most significant
        bit. Accepts single sketches or stacked rows.
    """
    sketch_p = np.asarray(sketch_p, dtype=np.float32)
    sketch_c = np.asarray(sketch_c, dtype=np.float32)
    bits = sketch_p.shape[-1]
    signs = (sketch_c - sketch_p) >= 0
    weights = np.left_shift(1, np.arange(bits - 1, -1, -1), dtype=np.int64)
    return (signs @ weights).astype(np.uint16)


class SketchTable:
    """ Projections of every point onto `bits` Gaussian hyperplanes. """

    def __init__(self, hyperplanes, sketches):
        self.hyperplanes = hyperplanes
        self.sketches = sketches

    @property
    def bits(self):
        return self.hyperplanes.shape[0]

    @classmethod
    def build(cls, dataset, bits, seed):
        hyperplanes = rng_for(_HYPERPLANE_STREAM, seed).standard_normal(
            (bits, dataset.d)).astype(np.float32)
        projection = hyperplanes.astype(dataset.gemm_dtype)
        sketches = np.empty((dataset.n, bits), dtype=np.float32)
        for start, stop in chunks(dataset.n, SKETCH_CHUNK):
            sketches[start:stop] = dataset.rows(np.arange(start, stop)) @ projection.T
        return cls(hyperplanes, sketches)

    def hashes(self, src, dst):
        return residual_hashes(self.sketches[src], self.sketches[dst])


@numba.njit(nogil=True, cache=True)
def _closer(key_a, id_a, key_b, id_b):
    return key_a < key_b or (key_a == key_b and id_a < id_b)


@numba.njit(nogil=True, cache=True)
def _insert_one(ids, hashes, dists, counts, furthest, p, c, h, dbits):
    row_ids = ids[p]
    row_h = hashes[p]
    row_d = dists[p]
    count = counts[p]
    key = bf16_order_key(dbits)

    lo = 0
    hi = count
    while lo < hi:
        mid = (lo + hi) // 2
        if row_h[mid] < h:
            lo = mid + 1
        else:
            hi = mid
    pos = lo

    if pos < count and row_h[pos] == h:
        if _closer(key, c, bf16_order_key(row_d[pos]), np.int64(row_ids[pos])):
            row_ids[pos] = c
            row_d[pos] = dbits
            furthest[p] = -1
            return REPLACED
        return REJECTED

    if count < row_ids.shape[0]:
        for j in range(count, pos, -1):
            row_ids[j] = row_ids[j - 1]
            row_h[j] = row_h[j - 1]
            row_d[j] = row_d[j - 1]
        row_ids[pos] = c
        row_h[pos] = h
        row_d[pos] = dbits
        counts[p] = count + 1
        furthest[p] = -1
        return INSERTED

    f = furthest[p]
    if f < 0:
        f = 0
        for j in range(1, count):
            if _closer(bf16_order_key(row_d[f]), np.int64(row_ids[f]),
                       bf16_order_key(row_d[j]), np.int64(row_ids[j])):
                f = j
        furthest[p] = f
    if not _closer(key, c, bf16_order_key(row_d[f]), np.int64(row_ids[f])):
        return REJECTED

    if f < pos:
        for j in range(f, pos - 1):
            row_ids[j] = row_ids[j + 1]
            row_h[j] = row_h[j + 1]
            row_d[j] = row_d[j + 1]
        target = pos - 1
    else:
        for j in range(f, pos, -1):
            row_ids[j] = row_ids[j - 1]
            row_h[j] = row_h[j - 1]
            row_d[j] = row_d[j - 1]
        target = pos
    row_ids[target] = c
    row_h[target] = h
    row_d[target] = dbits
    furthest[p] = -1
    return EVICTED


@numba.njit(nogil=True, cache=True)
def _insert_edges(ids, hashes, dists, counts, furthest, src, dst, edge_hashes, edge_bits):
    outcomes = np.zeros(4, np.int64)
    for e in range(src.shape[0]):
        outcome = _insert_one(ids, hashes, dists, counts, furthest,
                              src[e], dst[e], edge_hashes[e], edge_bits[e])
        outcomes[outcome] += 1
    return outcomes


def order_keys(bits):
    """ Vectorized bfloat16 order keys. """
    b = np.asarray(bits).astype(np.int64)
    return np.where(b >= 0x8000, 0xFFFF - b, b + 0x8000)


class ReservoirArena:
    """ Reservoirs of all points in flat preallocated arrays.

        Slot payload is exactly n * capacity * 8 bytes: uint32 ids, uint16
        hashes and uint16 bfloat16 dissimilarities. Counts and the cached
        furthest slot are per-point bookkeeping on top of that.
    """

    def __init__(self, n, capacity):
        self.n = n
        self.capacity = capacity
        try:
            self.ids = self._allocate((n, capacity), np.uint32)
            self.hashes = self._allocate((n, capacity), np.uint16)
            self.dists = self._allocate((n, capacity), np.uint16)
            self.counts = np.zeros(n, dtype=np.int32)
            self.furthest = np.full(n, -1, dtype=np.int32)
        except MemoryError:
            raise ReservoirAllocationError(self.required_bytes(n, capacity))

    @staticmethod
    def _allocate(shape, dtype):
        return np.zeros(shape, dtype=dtype)

    @staticmethod
    def required_bytes(n, capacity):
        return n * capacity * SLOT_BYTES + n * 8

    @property
    def payload_nbytes(self):
        return self.ids.nbytes + self.hashes.nbytes + self.dists.nbytes

    def insert_edges(self, src, dst, edge_hashes, dissims):
        """ Offers candidate dst[e] to the reservoir of src[e] for every e.
            Returns outcome counts in OUTCOMES order.
        """
        return _insert_edges(
            self.ids, self.hashes, self.dists, self.counts, self.furthest,
            np.ascontiguousarray(src, dtype=np.int64),
            np.ascontiguousarray(dst, dtype=np.int64),
            np.ascontiguousarray(edge_hashes, dtype=np.uint16),
            to_bfloat16(dissims))

    def insert(self, p, c, h, dissim):
        """ Single insertion; returns one of INSERTED, REPLACED, EVICTED, REJECTED. """
        outcomes = self.insert_edges([p], [c], [h], [dissim])
        return int(np.flatnonzero(outcomes)[0])

    def finalize(self, p):
        """ Kept candidates of p ascending by (stored dissimilarity, id). """
        count = self.counts[p]
        ids = self.ids[p, :count].astype(np.int64)
        bits = self.dists[p, :count]
        order = np.lexsort((ids, order_keys(bits)))
        return ids[order], from_bfloat16(bits[order])

    def finalize_all(self):
        """ finalize() for every point at once; unused slots sort last. """
        keys = order_keys(self.dists)
        unused = np.arange(self.capacity)[None, :] >= self.counts[:, None]
        keys[unused] = np.iinfo(np.int64).max
        order = np.lexsort((self.ids.astype(np.int64), keys), axis=-1)
        ids = np.take_along_axis(self.ids, order, axis=-1).astype(np.int64)
        dists = from_bfloat16(np.take_along_axis(self.dists, order, axis=-1))
        return ids, dists, self.counts.copy()

    def contents(self, p):
        """ (id, hash, bfloat16 bits) tuples of p in slot order. """
        count = self.counts[p]
        return [
            (int(i), int(h), int(b))
            for i, h, b in zip(self.ids[p, :count], self.hashes[p, :count], self.dists[p, :count])
        ]


class Reservoir:
    """ Reservoir of a single point, backed by a one-row arena. """

    def __init__(self, capacity, point=0):
        self.point = point
        self._arena = ReservoirArena(1, capacity)

    @property
    def capacity(self):
        return self._arena.capacity

    def __len__(self):
        return int(self._arena.counts[0])

    @property
    def cached_furthest(self):
        return int(self._arena.furthest[0])

    def hashes(self):
        return self._arena.hashes[0, :len(self)].copy()

    def insert(self, candidate, h, dissim):
        if candidate == self.point:
            raise UsageError("a point cannot be its own candidate")
        return self._arena.insert(0, candidate, h, dissim)

    def finalize(self):
        return self._arena.finalize(0)

    def contents(self):
        return self._arena.contents(0)
