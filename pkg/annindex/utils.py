import time
import logging
from contextlib import contextmanager

import numba
import numpy as np

logger = logging.getLogger(__name__)


def rng_for(*path):
    """ Generator seeded by an integer path, e.g. (stream, seed, replica, depth, 0, 7).
        The same path always yields the same stream, whatever thread asks.
    """
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in path]))


@contextmanager
def timed(label, sink=None):
    """ Measures wall time of the block. If `sink` is a dict the elapsed
        seconds are stored under `label`.
    """
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start
        if sink is not None:
            sink[label] = sink.get(label, 0.0) + elapsed
        logger.debug("%s took %.3fs", label, elapsed)


def to_bfloat16(values):
    """ Rounds float32 values to bfloat16 (round-to-nearest-even) and returns
        the raw 16-bit patterns as uint16.
    """
    values = np.ascontiguousarray(values, dtype=np.float32)
    bits = values.view(np.uint32).astype(np.uint64)
    rounding_bias = ((bits >> 16) & 1) + 0x7FFF
    rounded = ((bits + rounding_bias) >> 16).astype(np.uint16)
    nan = np.isnan(values)
    if nan.any():
        rounded[nan] = 0x7FC0
    return rounded


def from_bfloat16(bits):
    bits = np.asarray(bits, dtype=np.uint16)
    return (bits.astype(np.uint32) << 16).view(np.float32)


@numba.njit(nogil=True, cache=True)
def bf16_order_key(bits):
    """ Maps a bfloat16 bit pattern to an unsigned key with the same order
        as the float value it encodes.
    """
    b = np.int64(bits)
    if b >= 0x8000:
        return 0xFFFF - b
    return b + 0x8000


@numba.njit(nogil=True, cache=True)
def topk_smallest(values, k, skip_diagonal):
    """ Column indices of the k smallest entries of each row, ascending by
        (value, column). Rows with fewer than k eligible columns are padded
        with -1. Partial selection by insertion; no row is fully sorted.
    """
    rows, cols = values.shape
    out = np.full((rows, k), -1, np.int64)
    best = np.empty(k, np.float64)
    idx = np.empty(k, np.int64)
    for r in range(rows):
        size = 0
        for c in range(cols):
            if skip_diagonal and c == r:
                continue
            v = values[r, c]
            if size < k:
                j = size
                size += 1
            elif v < best[k - 1]:
                j = k - 1
            else:
                continue
            while j > 0 and v < best[j - 1]:
                best[j] = best[j - 1]
                idx[j] = idx[j - 1]
                j -= 1
            best[j] = v
            idx[j] = c
        for j in range(size):
            out[r, j] = idx[j]
    return out


def chunks(total, size):
    for start in range(0, total, size):
        yield start, min(total, start + size)
