"""
Index construction: carve the dataset into overlapping leaves, stream each
leaf's candidate edges into per-point HashPrune reservoirs, then turn every
reservoir into a bounded out-neighborhood with an optional final prune.
"""
import logging
from dataclasses import dataclass, field, asdict
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from django.conf import settings

from annindex.exceptions import UsageError, GraphValidationError
from annindex.graph_search import NavGraph, SearchParams, beam_search
from annindex.hashprune import HashParams, SketchTable, ReservoirArena, OUTCOMES
from annindex.leafbuild import LeafParams, leaf_edges
from annindex.partition import PartitionParams, carve
from annindex.pruning import PruneParams, prune_points
from annindex.utils import timed, chunks

logger = logging.getLogger(__name__)

# Leaves whose edges are gathered before one round of stripe inserts.
LEAF_BATCH = 64
PRUNE_CHUNK = 4096


@dataclass(frozen=True)
class BuildParams:
    partition: PartitionParams = field(default_factory=PartitionParams)
    leaf: LeafParams = field(default_factory=LeafParams)
    hash: HashParams = field(default_factory=HashParams)
    prune: PruneParams = field(default_factory=PruneParams)
    final_prune: bool = True

    @property
    def seed(self):
        return self.partition.seed

    def as_dict(self):
        values = asdict(self)
        values["leaf"]["pick_mode"] = self.leaf.pick_mode.value
        values["partition"]["fanout"] = list(self.partition.fanout)
        return values


@dataclass
class BuildStats:
    n: int = 0
    threads: int = 1
    partition_s: float = 0.0
    leaf_build_s: float = 0.0
    final_prune_s: float = 0.0
    total_s: float = 0.0
    leaf_count: int = 0
    instance_count: int = 0
    max_depth: int = 0
    edges_streamed: int = 0
    inserted: int = 0
    replaced: int = 0
    evicted: int = 0
    rejected: int = 0
    reservoir_payload_bytes: int = 0
    avg_out_degree: float = 0.0
    max_out_degree: int = 0

    @property
    def rejection_rate(self):
        return self.rejected / self.edges_streamed if self.edges_streamed else 0.0

    def record_outcomes(self, outcomes):
        for name, count in zip(OUTCOMES, outcomes):
            setattr(self, name, getattr(self, name) + int(count))

    def as_dict(self):
        values = asdict(self)
        values["rejection_rate"] = self.rejection_rate
        return values


class IndexBuilder:
    """ Runs one build. The phases are exposed separately so callers can
        feed leaves in any order; the result only depends on the leaves.
    """

    def __init__(self, dataset, params=None, threads=None):
        if dataset.n < 2:
            raise UsageError("building an index needs at least two points")
        self.dataset = dataset
        self.params = params or BuildParams()
        self.threads = max(1, threads or settings.ANNINDEX_THREADS)
        self.stats = BuildStats(n=dataset.n, threads=self.threads)
        self._timings = {}
        self._sketches = None
        self.arena = None

    def _pool(self):
        return ThreadPoolExecutor(max_workers=self.threads)

    def partition(self):
        with timed("partition_s", self._timings):
            leafset = carve(self.dataset, self.params.partition, workers=self.threads)
        self.stats.leaf_count += len(leafset)
        self.stats.instance_count += leafset.instance_count
        self.stats.max_depth = max(self.stats.max_depth, leafset.max_depth)
        return leafset

    def _prepare(self):
        if self.arena is not None:
            return
        hash_params = self.params.hash
        self._sketches = SketchTable.build(self.dataset, hash_params.bits, self.params.seed)
        self.arena = ReservoirArena(self.dataset.n, hash_params.reservoir)
        self.stats.reservoir_payload_bytes = self.arena.payload_nbytes
        logger.info(
            "allocated %d reservoirs of %d slots (%d bytes)",
            self.dataset.n, hash_params.reservoir, self.arena.payload_nbytes)

    def _insert_stripe(self, src, dst, hashes, dissims):
        return self.arena.insert_edges(src, dst, hashes, dissims)

    def stream_leaves(self, leaves):
        """ Builds every leaf and streams its edges into the reservoirs.

            Edges are grouped by src modulo the thread count; each group is
            inserted by a single task, so no reservoir has two writers.
        """
        stripes = self.threads
        with timed("leaf_build_s", self._timings), self._pool() as pool:
            self._prepare()
            leaves = list(leaves)
            for start, stop in chunks(len(leaves), LEAF_BATCH):
                parts = list(pool.map(
                    lambda ids: leaf_edges(self.dataset, ids, self.params.leaf), leaves[start:stop]))
                src = np.concatenate([part[0] for part in parts])
                if not len(src):
                    continue
                dst = np.concatenate([part[1] for part in parts])
                dissims = np.concatenate([part[2] for part in parts])
                hashes = self._sketches.hashes(src, dst)
                owner = src % stripes
                order = np.argsort(owner, kind="stable")
                bounds = np.searchsorted(owner[order], np.arange(stripes + 1))
                futures = []
                for stripe in range(stripes):
                    sel = order[bounds[stripe]:bounds[stripe + 1]]
                    if len(sel):
                        futures.append(pool.submit(
                            self._insert_stripe, src[sel], dst[sel], hashes[sel], dissims[sel]))
                for future in futures:
                    self.stats.record_outcomes(future.result())
                self.stats.edges_streamed += len(src)
        logger.info(
            "streamed %d edges (%d inserted, %d replaced, %d evicted, %d rejected)",
            self.stats.edges_streamed, self.stats.inserted, self.stats.replaced,
            self.stats.evicted, self.stats.rejected)

    def _prune_chunk(self, start, stop):
        points = np.arange(start, stop, dtype=np.int64)
        return start, prune_points(
            self.dataset, points, self.arena.ids[start:stop],
            self.arena.counts[start:stop], self.params.prune)

    def finalize(self):
        """ Turns the reservoirs into the navigable graph. """
        max_degree = self.params.prune.max_degree
        with timed("final_prune_s", self._timings):
            self._prepare()
            graph = NavGraph(self.dataset.n, max_degree)
            if self.params.final_prune:
                with self._pool() as pool:
                    futures = [pool.submit(self._prune_chunk, start, stop)
                               for start, stop in chunks(self.dataset.n, PRUNE_CHUNK)]
                    for future in futures:
                        start, (ids, counts) = future.result()
                        for offset, count in enumerate(counts):
                            graph.set_neighbors(start + offset, ids[offset, :count])
            else:
                ids, _, counts = self.arena.finalize_all()
                for p, count in enumerate(counts):
                    graph.set_neighbors(p, ids[p, :min(count, max_degree)])
            degrees = graph.out_degrees()
        self.stats.avg_out_degree = float(degrees.mean())
        self.stats.max_out_degree = int(degrees.max())
        return graph

    def run(self, leaves_path=None):
        """ All three phases. `leaves_path` receives a text dump of the leaves. """
        with timed("total_s", self._timings):
            leafset = self.partition()
            if leaves_path:
                with timed("partition_s", self._timings):
                    leafset.dump(leaves_path)
            self.stream_leaves(leafset)
            graph = self.finalize()
        for phase in ("partition_s", "leaf_build_s", "final_prune_s", "total_s"):
            setattr(self.stats, phase, self._timings.get(phase, 0.0))
        problems = graph.validate()
        if problems:
            raise GraphValidationError(problems)
        logger.info(
            "built graph over %d points in %.2fs (avg degree %.1f)",
            self.dataset.n, self.stats.total_s, self.stats.avg_out_degree)
        return graph


def build(dataset, params=None, threads=None):
    return IndexBuilder(dataset, params, threads).run()


def build_with_stats(dataset, params=None, threads=None, leaves_path=None):
    builder = IndexBuilder(dataset, params, threads)
    graph = builder.run(leaves_path)
    return graph, builder.stats


@dataclass
class KnnGraph:
    """ Approximate k nearest neighbors of every point, -1 padded. """
    ids: np.ndarray
    dists: np.ndarray

    @property
    def k(self):
        return self.ids.shape[1]

    def edges(self):
        for p in range(self.ids.shape[0]):
            for neighbor, dissim in zip(self.ids[p], self.dists[p]):
                if neighbor >= 0:
                    yield p, int(neighbor), float(dissim)

    def save_tsv(self, path):
        with open(path, "w") as handle:
            for src, dst, dissim in self.edges():
                handle.write(f"{src}\t{dst}\t{dissim:.6g}\n")


def knn_from_graph(graph, dataset, k, beam):
    """ Searches the graph for every point, starting at the point itself,
        and keeps the k closest results other than the point.
    """
    if beam < k:
        raise UsageError(f"beam width {beam} cannot hold k={k} results")
    ids = np.full((dataset.n, k), -1, dtype=np.int64)
    dists = np.full((dataset.n, k), np.inf, dtype=np.float32)
    for p in range(dataset.n):
        result = beam_search(graph, dataset, dataset.data[p], SearchParams(beam=beam, start=p))
        found = [(i, d) for i, d in zip(result.ids, result.dists) if i != p][:k]
        for j, (i, d) in enumerate(found):
            ids[p, j] = i
            dists[p, j] = d
    return KnnGraph(ids, dists)


def build_knn_graph(dataset, params=None, k=10, beam=None, threads=None):
    """ Builds the index, then derives a k-NN graph from it. """
    beam = beam if beam is not None else 2 * k
    if beam < k:
        raise UsageError(f"beam width {beam} cannot hold k={k} results")
    graph, stats = build_with_stats(dataset, params, threads)
    return knn_from_graph(graph, dataset, k, beam), stats

