"""
Candidate edges inside one leaf: an exact all-pairs dissimilarity block
followed by a k-nearest-neighbor pick.
"""
from dataclasses import dataclass

import numpy as np

from annindex.constants import Measure, PickMode, DEFAULT_K_LEAF, GRAM_BLOCK
from annindex.exceptions import UsageError
from annindex.utils import topk_smallest, chunks


@dataclass(frozen=True)
class LeafParams:
    k: int = DEFAULT_K_LEAF
    pick_mode: PickMode = PickMode.BIDIRECTED

    def __post_init__(self):
        object.__setattr__(self, "pick_mode", PickMode(self.pick_mode))
        if self.k < 1:
            raise UsageError(f"leaf k must be at least 1, got {self.k}")


def _gram(rows, block):
    """ rows @ rows.T from upper-triangle tiles mirrored into the lower
        triangle, so the result is exactly symmetric.
    """
    m = rows.shape[0]
    gram = np.empty((m, m), dtype=rows.dtype)
    for i0, i1 in chunks(m, block):
        for j0, j1 in chunks(m, block):
            if j0 < i0:
                continue
            tile = rows[i0:i1] @ rows[j0:j1].T
            if j0 == i0:
                upper = np.triu(tile)
                tile = upper + np.triu(tile, 1).T
            else:
                gram[j0:j1, i0:i1] = tile.T
            gram[i0:i1, j0:j1] = tile
    return gram


def all_pairs(dataset, leaf_ids, block=GRAM_BLOCK):
    """ m x m float32 dissimilarities between the points of one leaf.

        Entry (i, j) belongs to (leaf_ids[i], leaf_ids[j]). The diagonal is 0
        under squared L2. Integer data goes through float64 products, which
        are exact, and is rounded to float32 once at the end.
    """
    leaf_ids = np.asarray(leaf_ids, dtype=np.int64)
    gram = _gram(dataset.rows(leaf_ids), block)
    if dataset.measure is Measure.MIPS:
        return (-gram).astype(np.float32)
    norms = dataset.norms.for_gemm(leaf_ids)
    # norm sums first: n_i + n_j == n_j + n_i keeps the block symmetric
    dists = norms[:, None] + norms[None, :]
    dists -= 2 * gram
    np.maximum(dists, 0, out=dists)
    np.fill_diagonal(dists, 0)
    return dists.astype(np.float32)


def pick_knn(block, k, pick_mode=PickMode.BIDIRECTED):
    """ Local (src, dst) positions of the edges picked from an all-pairs block.

        Each row keeps its k nearest other columns, ties broken by the smaller
        column. With leaf ids sorted ascending that is the smaller global id.
        `k` is clamped to m - 1. Bidirected output is deduplicated.
    """
    pick_mode = PickMode(pick_mode)
    m = block.shape[0]
    k = min(k, m - 1)
    if k < 1:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy()
    nearest = topk_smallest(block, k, True)
    src = np.repeat(np.arange(m, dtype=np.int64), k)
    dst = nearest.ravel()
    if pick_mode is PickMode.DIRECTED:
        return src, dst
    if pick_mode is PickMode.INVERTED:
        return dst, src
    codes = np.unique(np.concatenate([src * m + dst, dst * m + src]))
    return codes // m, codes % m


def leaf_edges(dataset, leaf_ids, params):
    """ Candidate edges of one leaf as global (src, dst, dissimilarity) arrays. """
    leaf_ids = np.sort(np.asarray(leaf_ids, dtype=np.int64))
    block = all_pairs(dataset, leaf_ids)
    src, dst = pick_knn(block, params.k, params.pick_mode)
    return leaf_ids[src], leaf_ids[dst], block[src, dst]
