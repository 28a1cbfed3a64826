"""
The navigable graph, greedy beam search over it and the exact oracle used
to score it.
"""
import bisect
import logging
import struct
import time
from dataclasses import dataclass

import numpy as np

from annindex.constants import (
    Measure,
    GRAPH_MAGIC,
    GRAPH_VERSION,
    EMPTY_SLOT,
    DEFAULT_START_SAMPLE,
)
from annindex.dataset import Dataset, GroundTruth, cross_dissimilarities
from annindex.exceptions import UsageError, DatasetLoadError
from annindex.utils import rng_for, topk_smallest, chunks

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sIII")
_START_STREAM = 23
ORACLE_CHUNK = 256


class NavGraph:
    """ Directed graph with at most `max_degree` out-neighbors per point,
        stored as a fixed-width table padded with EMPTY_SLOT.
    """

    def __init__(self, n, max_degree):
        if n < 1 or max_degree < 1:
            raise UsageError("a graph needs at least one point and one slot per point")
        self.max_degree = max_degree
        self.table = np.full((n, max_degree), EMPTY_SLOT, dtype=np.uint32)
        self.lengths = np.zeros(n, dtype=np.uint32)

    @property
    def n(self):
        return self.table.shape[0]

    def __len__(self):
        return self.n

    def neighbors(self, p):
        return self.table[p, :self.lengths[p]]

    def set_neighbors(self, p, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) > self.max_degree:
            raise UsageError(f"point {p}: {len(ids)} neighbors exceed max degree {self.max_degree}")
        self.table[p] = EMPTY_SLOT
        self.table[p, :len(ids)] = ids
        self.lengths[p] = len(ids)

    def out_degrees(self):
        return self.lengths.astype(np.int64)

    def degree_histogram(self):
        """ Count of points for every out-degree 0..max_degree. """
        return np.bincount(self.out_degrees(), minlength=self.max_degree + 1)

    def validate(self):
        """ Problems with the graph, empty when it is well formed. """
        problems = []
        if (self.lengths > self.max_degree).any():
            problems.append("out-degree above max degree")
        for p in range(self.n):
            ids = self.neighbors(p).astype(np.int64)
            if (ids >= self.n).any():
                problems.append(f"point {p}: neighbor id out of range")
            if (ids == p).any():
                problems.append(f"point {p}: self loop")
            if len(np.unique(ids)) != len(ids):
                problems.append(f"point {p}: duplicate neighbor")
            if (self.table[p, self.lengths[p]:] != EMPTY_SLOT).any():
                problems.append(f"point {p}: unused slots not empty")
        return problems

    def save(self, path):
        """ Header (magic, version, n, max degree) then per point its length
            followed by `max_degree` uint32 slots, all little-endian.
        """
        rows = np.empty((self.n, self.max_degree + 1), dtype="<u4")
        rows[:, 0] = self.lengths
        rows[:, 1:] = self.table
        with open(path, "wb") as handle:
            handle.write(_HEADER.pack(GRAPH_MAGIC, GRAPH_VERSION, self.n, self.max_degree))
            handle.write(rows.tobytes())

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as handle:
                raw = handle.read()
        except OSError as e:
            raise DatasetLoadError(f"cannot read graph: {e.strerror}", path)
        if len(raw) < _HEADER.size:
            raise DatasetLoadError("truncated graph header", path, len(raw))
        magic, version, n, max_degree = _HEADER.unpack_from(raw)
        if magic != GRAPH_MAGIC:
            raise DatasetLoadError("not a graph file", path, 0)
        if version != GRAPH_VERSION:
            raise DatasetLoadError(f"unsupported graph version {version}", path, 4)
        expected = _HEADER.size + n * (max_degree + 1) * 4
        if len(raw) != expected:
            raise DatasetLoadError(
                f"graph length mismatch: expected {expected} bytes, found {len(raw)}",
                path, min(len(raw), expected))
        rows = np.frombuffer(raw, dtype="<u4", offset=_HEADER.size).reshape(n, max_degree + 1)
        graph = cls(n, max_degree)
        graph.lengths[:] = rows[:, 0]
        graph.table[:] = rows[:, 1:]
        problems = graph.validate()
        if problems:
            raise DatasetLoadError(f"malformed graph: {problems[0]}", path)
        return graph


@dataclass(frozen=True)
class SearchParams:
    beam: int
    start: int

    def __post_init__(self):
        if self.beam < 1:
            raise UsageError(f"beam width must be at least 1, got {self.beam}")


@dataclass
class SearchResult:
    ids: list
    dists: list
    visited: int
    comparisons: int


def beam_search(graph, dataset, q, params):
    """ Greedy best-first search keeping the `params.beam` closest points seen.

        Repeatedly expands the closest unvisited beam member until every beam
        member has been visited. `comparisons` counts every query-to-point
        dissimilarity, the start point included.
    """
    if not 0 <= params.start < graph.n:
        raise UsageError(f"start point {params.start} out of range")
    q = dataset.cast_query(q)
    start_dist = float(dataset.dissimilarities_to(q, [params.start])[0])
    beam = [(start_dist, params.start)]
    in_beam = {params.start}
    visited = set()
    comparisons = 1
    while True:
        current = next((p for _, p in beam if p not in visited), None)
        if current is None:
            break
        visited.add(current)
        fresh = [c for c in graph.neighbors(current).tolist() if c not in visited and c not in in_beam]
        if not fresh:
            continue
        dists = dataset.dissimilarities_to(q, fresh)
        comparisons += len(fresh)
        for c, d in zip(fresh, dists):
            bisect.insort(beam, (float(d), c))
            in_beam.add(c)
        while len(beam) > params.beam:
            _, dropped = beam.pop()
            in_beam.discard(dropped)
    return SearchResult(
        ids=[p for _, p in beam],
        dists=[d for d, _ in beam],
        visited=len(visited),
        comparisons=comparisons)


def choose_start(dataset, sample_size=DEFAULT_START_SAMPLE, seed=0):
    """ Start point for search: among a seeded sample, the point nearest the
        sample mean (squared L2) or with the largest inner product with the
        sample mean (MIPS). The whole dataset is used when the sample covers it.
    """
    if sample_size >= dataset.n:
        sample = np.arange(dataset.n)
    else:
        sample = np.sort(rng_for(_START_STREAM, seed).choice(dataset.n, size=sample_size, replace=False))
    rows = dataset.data[sample].astype(np.float64)
    mean = rows.mean(axis=0)
    if dataset.measure is Measure.MIPS:
        scores = -(rows @ mean)
    else:
        diff = rows - mean
        scores = np.einsum("ij,ij->i", diff, diff)
    return int(sample[np.argmin(scores)])


def _query_rows(dataset, queries):
    data = queries.data if isinstance(queries, Dataset) else np.asarray(queries)
    if data.ndim != 2 or data.shape[1] != dataset.d:
        raise UsageError(f"queries must have dimension {dataset.d}")
    return data


def brute_force_knn(dataset, queries, k):
    """ Exact k nearest neighbors of every query, ascending by dissimilarity
        with ties broken by the smaller id. Computed in float64.
    """
    if not 1 <= k <= dataset.n:
        raise UsageError(f"k must lie in [1, {dataset.n}], got {k}")
    data = _query_rows(dataset, queries).astype(np.float64)
    base = dataset.data.astype(np.float64)
    base_norms = np.einsum("ij,ij->i", base, base)
    ids = np.empty((len(data), k), dtype=np.int64)
    dists = np.empty((len(data), k), dtype=np.float32)
    for start, stop in chunks(len(data), ORACLE_CHUNK):
        block = cross_dissimilarities(data[start:stop], base, dataset.measure, None, base_norms)
        nearest = topk_smallest(block, k, False)
        ids[start:stop] = nearest
        dists[start:stop] = np.take_along_axis(block, nearest, axis=1)
    return GroundTruth(ids, dists)


def recall_at(results, truth, k, k_prime=None):
    """ Mean over queries of |results[q][:k'] ∩ truth[q][:k]| / k. """
    if k_prime is None:
        k_prime = k
    truth_ids = truth.ids if isinstance(truth, GroundTruth) else np.asarray(truth)
    if len(results) != len(truth_ids):
        raise UsageError(f"{len(results)} result lists but {len(truth_ids)} ground-truth rows")
    if k > truth_ids.shape[1]:
        raise UsageError(f"ground truth holds {truth_ids.shape[1]} neighbors, k={k} requested")
    if not len(results):
        return 0.0
    hits = 0
    for found, expected in zip(results, truth_ids):
        hits += len(set(int(i) for i in list(found)[:k_prime]) & set(int(i) for i in expected[:k]))
    return hits / (k * len(results))


@dataclass
class BeamReport:
    beam: int
    recall: float
    mean_visited: float
    mean_comparisons: float
    qps: float

    def as_row(self):
        return f"{self.beam}\t{self.recall:.4f}\t{self.mean_visited:.1f}\t{self.mean_comparisons:.1f}\t{self.qps:.1f}"


def evaluate(graph, dataset, queries, truth, k, beams, start):
    """ Recall@k and search cost for every beam width in `beams`. """
    data = _query_rows(dataset, queries)
    reports = []
    for width in beams:
        if width < k:
            raise UsageError(f"beam width {width} is smaller than k={k}")
        params = SearchParams(beam=width, start=start)
        began = time.perf_counter()
        results = [beam_search(graph, dataset, q, params) for q in data]
        elapsed = time.perf_counter() - began
        reports.append(BeamReport(
            beam=width,
            recall=recall_at([r.ids for r in results], truth, k),
            mean_visited=float(np.mean([r.visited for r in results])),
            mean_comparisons=float(np.mean([r.comparisons for r in results])),
            qps=len(results) / elapsed if elapsed > 0 else float("inf")))
        logger.info("beam %d: recall@%d %.4f", width, k, reports[-1].recall)
    return reports
