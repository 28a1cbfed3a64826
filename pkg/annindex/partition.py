"""
Recursive randomized ball carving.

Each subproblem larger than `cmax` samples leaders, sends every point to
its `fanout(depth)` nearest leaders, merges undersized groups and recurses
on whatever is still too large. Randomness is keyed by the subproblem path,
so the result does not depend on how subproblems are scheduled.
"""
import math
import logging
from collections import deque
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from annindex.constants import (
    DEFAULT_CMAX,
    DEFAULT_CMIN,
    DEFAULT_P_SAMP,
    DEFAULT_LEADER_CAP,
    DEFAULT_FANOUT,
    DEFAULT_REPLICAS,
    MAX_CARVE_DEPTH,
)
from annindex.exceptions import UsageError
from annindex.utils import rng_for, topk_smallest, chunks

logger = logging.getLogger(__name__)

# Rows of a subproblem compared against its leaders per matrix product.
ASSIGN_CHUNK = 8192

_LEADER_STREAM = 0
_MERGE_STREAM = 1
_SPLIT_STREAM = 2


@dataclass(frozen=True)
class PartitionParams:
    cmax: int = DEFAULT_CMAX
    cmin: int = DEFAULT_CMIN
    p_samp: float = DEFAULT_P_SAMP
    leader_cap: int = DEFAULT_LEADER_CAP
    fanout: tuple = DEFAULT_FANOUT
    replicas: int = DEFAULT_REPLICAS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fanout", tuple(int(f) for f in self.fanout))
        if not 1 <= self.cmin < self.cmax:
            raise UsageError(f"need 1 <= cmin < cmax, got cmin={self.cmin} cmax={self.cmax}")
        if not 0 < self.p_samp <= 1:
            raise UsageError(f"p_samp must lie in (0, 1], got {self.p_samp}")
        if self.leader_cap < 2:
            raise UsageError("leader_cap must be at least 2")
        if any(f < 1 for f in self.fanout):
            raise UsageError(f"fanout factors must be >= 1, got {self.fanout}")
        if self.replicas < 1:
            raise UsageError("replicas must be at least 1")

    def fanout_at(self, depth):
        return self.fanout[depth] if depth < len(self.fanout) else 1

    @property
    def max_multiplicity(self):
        return math.prod(self.fanout) * self.replicas

    def leader_count(self, size):
        # at least two leaders, otherwise a subproblem can never split
        return min(max(2, math.ceil(self.p_samp * size)), self.leader_cap, size)


class LeafSet:
    """ Overlapping partition of point ids into bounded-size leaves. """

    def __init__(self, leaves, max_depth=0):
        self.leaves = [np.asarray(leaf, dtype=np.int64) for leaf in leaves]
        self.max_depth = max_depth

    def __len__(self):
        return len(self.leaves)

    def __iter__(self):
        return iter(self.leaves)

    @property
    def instance_count(self):
        return int(sum(len(leaf) for leaf in self.leaves))

    def sizes(self):
        return np.array([len(leaf) for leaf in self.leaves], dtype=np.int64)

    def memberships(self, n):
        """ Number of leaves each point belongs to. """
        if not self.leaves:
            return np.zeros(n, dtype=np.int64)
        return np.bincount(np.concatenate(self.leaves), minlength=n)

    def dumps(self):
        return "\n".join(
            f"{index}: " + " ".join(str(i) for i in leaf)
            for index, leaf in enumerate(self.leaves)
        ) + "\n"

    def dump(self, path):
        with open(path, "w") as handle:
            handle.write(self.dumps())


@dataclass
class _Subproblem:
    ids: np.ndarray
    path: tuple = ()
    depth: int = 0
    replica: int = 0


def leaders(subproblem_ids, count, rng):
    """ `count` distinct ids drawn uniformly without replacement. """
    subproblem_ids = np.asarray(subproblem_ids)
    if count > len(subproblem_ids):
        raise UsageError(f"cannot draw {count} leaders from {len(subproblem_ids)} points")
    return rng.choice(subproblem_ids, size=count, replace=False)


def assign_to_leaders(dataset, ids, leader_ids, fanout):
    """ Groups `ids` by their `fanout` nearest leaders.

        Returns one id array per leader, in ascending leader-id order. Ties
        between equally near leaders go to the smaller leader id.
    """
    leader_ids = np.sort(leader_ids)
    rows, cols = [], []
    for start, stop in chunks(len(ids), ASSIGN_CHUNK):
        dists = dataset.pairwise(ids[start:stop], leader_ids)
        nearest = topk_smallest(dists, fanout, False)
        rows.append(np.repeat(np.arange(start, stop), fanout))
        cols.append(nearest.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    order = np.argsort(cols, kind="stable")
    counts = np.bincount(cols, minlength=len(leader_ids))
    members = ids[rows[order]]
    return np.split(members, np.cumsum(counts)[:-1])


def _merge_partners(groups, sizes, alive, i, cmax):
    """ Live groups whose union with group i holds at most `cmax` ids. """
    others = alive.copy()
    others[i] = False
    # the summed size bounds the union from above
    accepted = others & (sizes + sizes[i] <= cmax)
    for j in np.flatnonzero(others & ~accepted & (sizes <= cmax)):
        accepted[j] = len(np.union1d(groups[i], groups[j])) <= cmax
    return np.flatnonzero(accepted)


def merge_small(groups, cmin, cmax, rng):
    """ Randomly merges groups smaller than `cmin` with other groups as long
        as the merged group, the union of both, stays within `cmax`. Empty
        groups are dropped.
    """
    groups = [np.asarray(g) for g in groups if len(g)]
    if len(groups) <= 1:
        return groups
    sizes = np.array([len(g) for g in groups], dtype=np.int64)
    alive = np.ones(len(groups), dtype=bool)
    pending = deque(rng.permutation(np.flatnonzero(sizes < cmin)).tolist())
    while pending:
        i = pending.popleft()
        if not alive[i] or sizes[i] >= cmin:
            continue
        feasible = _merge_partners(groups, sizes, alive, i, cmax)
        if not len(feasible):
            continue
        j = int(feasible[rng.integers(len(feasible))])
        groups[i] = np.union1d(groups[i], groups[j])
        sizes[i] = len(groups[i])
        alive[j] = False
        groups[j] = None
        if sizes[i] < cmin:
            pending.append(i)
    return [g for g, keep in zip(groups, alive) if keep]


def _split_evenly(ids, cmax, rng):
    shuffled = rng.permutation(ids)
    pieces = math.ceil(len(ids) / cmax)
    return [np.sort(piece) for piece in np.array_split(shuffled, pieces)]


def _carve_step(dataset, params, sub):
    """ One recursion step. Returns (leaves with their depth, child subproblems). """
    if len(sub.ids) <= params.cmax:
        return [(sub.ids, sub.depth)], []

    # depth is part of the key so no key is a zero-padded prefix of another
    key = (params.seed, sub.replica, sub.depth) + sub.path
    if sub.depth >= MAX_CARVE_DEPTH:
        logger.warning(
            "carving made no progress on %d points after %d levels; "
            "falling back to random splitting", len(sub.ids), sub.depth)
        pieces = _split_evenly(sub.ids, params.cmax, rng_for(_SPLIT_STREAM, *key))
        return [(piece, sub.depth + 1) for piece in pieces], []

    count = params.leader_count(len(sub.ids))
    chosen = leaders(sub.ids, count, rng_for(_LEADER_STREAM, *key))
    local_fanout = min(params.fanout_at(sub.depth), count)
    groups = assign_to_leaders(dataset, sub.ids, chosen, local_fanout)
    groups = merge_small(groups, params.cmin, params.cmax, rng_for(_MERGE_STREAM, *key))

    leaves, children = [], []
    for index, group in enumerate(groups):
        if len(group) <= params.cmax:
            leaves.append((group, sub.depth + 1))
        else:
            children.append(_Subproblem(
                ids=group, path=sub.path + (index,), depth=sub.depth + 1, replica=sub.replica))
    return leaves, children


def carve(dataset, params, workers=1):
    """ Overlapping partition of all points, the union over `params.replicas`
        independent runs. Subproblems of one depth are carved concurrently.
    """
    all_ids = np.arange(dataset.n, dtype=np.int64)
    leaves = []
    max_depth = 0
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for replica in range(params.replicas):
            frontier = [_Subproblem(ids=all_ids, replica=replica)]
            while frontier:
                steps = list(pool.map(lambda sub: _carve_step(dataset, params, sub), frontier))
                frontier = []
                for step_leaves, children in steps:
                    for leaf, depth in step_leaves:
                        leaves.append(leaf)
                        max_depth = max(max_depth, depth)
                    frontier.extend(children)
    leafset = LeafSet(leaves, max_depth=max_depth)
    logger.info(
        "carved %d points into %d leaves (%d instances, depth %d)",
        dataset.n, len(leafset), leafset.instance_count, max_depth)
    return leafset
