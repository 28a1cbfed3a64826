"""
Diversity pruning of candidate lists.

`robust_prune` is the classic formulation: take the nearest remaining
candidate, then discard every candidate it dominates. `lazy_robust_prune`
reaches the same output by walking candidates once in sorted order and
admitting one only if no already admitted neighbor dominates it, so
dissimilarities are only computed for candidates that are reached.
`prune_points` is the compiled batch version used by the builder.
"""
import math
from dataclasses import dataclass

import numba
import numpy as np

from annindex.constants import Measure, DEFAULT_ALPHA, DEFAULT_MAX_DEGREE
from annindex.exceptions import UsageError

_L2_CODE = 0
_MIPS_CODE = 1


@dataclass(frozen=True)
class PruneParams:
    alpha: float = DEFAULT_ALPHA
    max_degree: int = DEFAULT_MAX_DEGREE

    def __post_init__(self):
        if math.isnan(self.alpha) or self.alpha < 1:
            raise UsageError(f"alpha must be >= 1, got {self.alpha}")
        if self.max_degree < 1:
            raise UsageError(f"max degree must be at least 1, got {self.max_degree}")

    @property
    def prunes(self):
        """ False for the infinite alpha, which keeps the closest candidates as they are. """
        return not math.isinf(self.alpha)


def _by_dissimilarity(candidates):
    return sorted(((int(c), float(d)) for c, d in candidates), key=lambda item: (item[1], item[0]))


def robust_prune(p, candidates, params, dissim):
    """ Out-neighbors of `p` chosen from (id, dissimilarity-to-p) pairs.

        `dissim(y, z)` returns the dissimilarity between two points. A
        candidate z is dominated by an admitted y when alpha * d(y, z) is
        strictly less than d(p, z).
    """
    remaining = [item for item in _by_dissimilarity(candidates) if item[0] != p]
    out = []
    while remaining and len(out) < params.max_degree:
        y, _ = remaining.pop(0)
        out.append(y)
        if not params.prunes:
            continue
        remaining = [(z, dz) for z, dz in remaining if not params.alpha * dissim(y, z) < dz]
    return out


def lazy_robust_prune(p, candidates, params, dissim):
    out = []
    for c, dc in _by_dissimilarity(candidates):
        if len(out) >= params.max_degree:
            break
        if c == p:
            continue
        if params.prunes and any(params.alpha * dissim(y, c) < dc for y in out):
            continue
        out.append(c)
    return out


@numba.njit(nogil=True, cache=True)
def pair_dissimilarity(data, i, j, measure_code):
    """ Dissimilarity between rows i and j, accumulated in float64 and
        rounded to float32.
    """
    acc = 0.0
    if measure_code == _MIPS_CODE:
        for t in range(data.shape[1]):
            acc += np.float64(data[i, t]) * np.float64(data[j, t])
        return np.float32(-acc)
    for t in range(data.shape[1]):
        diff = np.float64(data[i, t]) - np.float64(data[j, t])
        acc += diff * diff
    return np.float32(acc)


@numba.njit(nogil=True, cache=True)
def _prune_rows(data, measure_code, points, cand_ids, cand_counts, alpha, max_degree,
                out_ids, out_counts):
    width = cand_ids.shape[1]
    prunes = not math.isinf(alpha)
    order_ids = np.empty(width, np.int64)
    order_d = np.empty(width, np.float32)
    for r in range(points.shape[0]):
        p = points[r]
        size = 0
        for a in range(cand_counts[r]):
            c = np.int64(cand_ids[r, a])
            if c == p:
                continue
            d = pair_dissimilarity(data, p, c, measure_code)
            j = size
            size += 1
            while j > 0 and (d < order_d[j - 1] or (d == order_d[j - 1] and c < order_ids[j - 1])):
                order_d[j] = order_d[j - 1]
                order_ids[j] = order_ids[j - 1]
                j -= 1
            order_d[j] = d
            order_ids[j] = c

        admitted = 0
        for a in range(size):
            if admitted >= max_degree:
                break
            c = order_ids[a]
            dc = np.float64(order_d[a])
            keep = True
            for b in range(admitted if prunes else 0):
                dyc = np.float64(pair_dissimilarity(data, out_ids[r, b], c, measure_code))
                if alpha * dyc < dc:
                    keep = False
                    break
            if keep:
                out_ids[r, admitted] = c
                admitted += 1
        out_counts[r] = admitted


def measure_code(measure):
    return _MIPS_CODE if Measure(measure) is Measure.MIPS else _L2_CODE


def dataset_dissimilarity(dataset):
    """ `dissim(y, z)` callable with the same float32 results the compiled
        kernel uses.
    """
    code = measure_code(dataset.measure)
    return lambda y, z: float(pair_dissimilarity(dataset.data, int(y), int(z), code))


def prune_points(dataset, points, cand_ids, cand_counts, params):
    """ Lazy robust prune of many points at once.

        Row r of `cand_ids` holds `cand_counts[r]` candidate ids of
        `points[r]`; their dissimilarities to the point are recomputed.
        Returns (neighbor ids padded with -1, neighbor counts).
    """
    points = np.ascontiguousarray(points, dtype=np.int64)
    cand_ids = np.ascontiguousarray(cand_ids, dtype=np.int64)
    cand_counts = np.ascontiguousarray(cand_counts, dtype=np.int64)
    if cand_ids.ndim != 2 or cand_ids.shape[0] != len(points) or len(cand_counts) != len(points):
        raise UsageError("candidate table does not match the point list")
    out_ids = np.full((len(points), params.max_degree), -1, dtype=np.int64)
    out_counts = np.zeros(len(points), dtype=np.int64)
    _prune_rows(dataset.data, measure_code(dataset.measure), points, cand_ids, cand_counts,
                float(params.alpha), params.max_degree, out_ids, out_counts)
    return out_ids, out_counts
