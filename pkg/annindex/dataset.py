import os
import hashlib
import logging

import numpy as np

from annindex.constants import ElemType, Measure, BIN_SUFFIXES, VECS_SUFFIXES
from annindex.exceptions import UsageError, DatasetLoadError

logger = logging.getLogger(__name__)

_LE_U32 = np.dtype("<u4")

FORMATS = {
    "fbin": ElemType.FLOAT32,
    "u8bin": ElemType.UINT8,
    "i8bin": ElemType.INT8,
    "fvecs": ElemType.FLOAT32,
    "bvecs": ElemType.UINT8,
}


def dissimilarity(a, b, measure=Measure.SQUARED_L2):
    """ Squared Euclidean distance or negative inner product between two
        vectors. Integer inputs are widened before accumulation, so the
        integer result is exact.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.dtype.kind in "iub" and b.dtype.kind in "iub":
        a = a.astype(np.int64)
        b = b.astype(np.int64)
        if measure is Measure.MIPS:
            return -int(np.dot(a, b))
        diff = a - b
        return int(np.dot(diff, diff))
    a = a.astype(np.float32)
    b = b.astype(np.float32)
    if measure is Measure.MIPS:
        return -float(np.dot(a, b))
    diff = a - b
    return float(np.dot(diff, diff))


def cross_dissimilarities(left, right, measure, left_norms=None, right_norms=None):
    """ All dissimilarities between the rows of `left` and `right` through one
        matrix product: |x-y|^2 = |x|^2 + |y|^2 - 2<x,y>. Negative values
        left by cancellation are clamped to 0.
    """
    gram = left @ right.T
    if measure is Measure.MIPS:
        np.negative(gram, out=gram)
        return gram
    if left_norms is None:
        left_norms = np.einsum("ij,ij->i", left, left)
    if right_norms is None:
        right_norms = np.einsum("ij,ij->i", right, right)
    gram *= -2
    gram += left_norms[:, None]
    gram += right_norms[None, :]
    np.maximum(gram, 0, out=gram)
    return gram


class NormCache:
    """ Per-point squared Euclidean norms.

        `sq_norms` is float32. Integer datasets additionally keep the exact
        norms as float64 for the integer matrix-product path.
    """
    def __init__(self, data):
        if data.dtype.kind in "iu":
            wide = data.astype(np.int64)
            exact = np.einsum("ij,ij->i", wide, wide).astype(np.float64)
            self.exact = exact
            self.sq_norms = exact.astype(np.float32)
        else:
            self.sq_norms = np.einsum("ij,ij->i", data, data, dtype=np.float32)
            self.exact = None

    def __len__(self):
        return len(self.sq_norms)

    def for_gemm(self, ids=None):
        norms = self.exact if self.exact is not None else self.sq_norms
        return norms if ids is None else norms[ids]


class Dataset:
    """ Immutable row-major vector store with its dissimilarity measure. """

    def __init__(self, data, measure=Measure.SQUARED_L2):
        data = np.ascontiguousarray(data)
        if data.ndim != 2:
            raise UsageError("dataset must be a two-dimensional array")
        n, d = data.shape
        if n < 1 or d < 1:
            raise UsageError("empty dataset")
        try:
            elem_type = ElemType(data.dtype.name)
        except ValueError:
            raise UsageError(f"unsupported element type {data.dtype}")
        measure = Measure(measure)
        if measure is Measure.MIPS and elem_type is not ElemType.FLOAT32:
            raise UsageError("the inner-product measure requires float32 data")

        self.data = data
        self.data.setflags(write=False)
        self.elem_type = elem_type
        self.measure = measure
        self._norms = None

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d}, {self.elem_type.value}, {self.measure.value})"

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def d(self):
        return self.data.shape[1]

    @property
    def gemm_dtype(self):
        # float64 keeps integer products exact for any benchmark dimension
        return np.dtype(np.float64) if self.elem_type.is_integer else np.dtype(np.float32)

    @property
    def norms(self):
        if self._norms is None:
            self._norms = NormCache(self.data)
        return self._norms

    def rows(self, ids=None):
        """ Rows converted to the matrix-product element type. """
        block = self.data if ids is None else self.data[ids]
        return block.astype(self.gemm_dtype, copy=False)

    def cast_query(self, q):
        q = np.asarray(q)
        if q.shape != (self.d,):
            raise UsageError(f"query has shape {q.shape}, expected ({self.d},)")
        return q.astype(self.gemm_dtype)

    def dissimilarities_to(self, q, ids):
        """ Dissimilarities from query `q` to the points `ids`. """
        rows = self.rows(ids)
        if self.measure is Measure.MIPS:
            return -(rows @ q)
        diff = rows - q
        return np.einsum("ij,ij->i", diff, diff)

    def pairwise(self, left_ids, right_ids):
        norms = self.norms
        return cross_dissimilarities(
            self.rows(left_ids), self.rows(right_ids), self.measure,
            norms.for_gemm(left_ids), norms.for_gemm(right_ids))

    def checksum(self):
        digest = hashlib.sha256()
        digest.update(np.array([self.n, self.d], dtype=_LE_U32).tobytes())
        digest.update(self.data.astype(self.data.dtype.newbyteorder("<"), copy=False).tobytes())
        return digest.hexdigest()


class GroundTruth:
    """ Exact neighbor table: ids (num_queries x k) and their dissimilarities. """

    def __init__(self, ids, dists):
        ids = np.asarray(ids)
        dists = np.asarray(dists, dtype=np.float32)
        if ids.ndim != 2 or ids.shape != dists.shape:
            raise UsageError("ground truth ids and distances must share a 2-D shape")
        self.ids = ids.astype(np.uint32)
        self.dists = dists

    @property
    def num_queries(self):
        return self.ids.shape[0]

    @property
    def k(self):
        return self.ids.shape[1]

    def save(self, path):
        with open(path, "wb") as handle:
            handle.write(np.array([self.num_queries, self.k], dtype=_LE_U32).tobytes())
            handle.write(self.ids.astype(_LE_U32).tobytes())
            handle.write(self.dists.astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        raw = _read_bytes(path)
        if len(raw) < 8:
            raise DatasetLoadError("truncated header", path, len(raw))
        num_queries, k = (int(v) for v in np.frombuffer(raw, dtype=_LE_U32, count=2))
        count = num_queries * k
        expected = 8 + count * 8
        if len(raw) != expected:
            raise DatasetLoadError(
                f"ground truth length mismatch: expected {expected} bytes, found {len(raw)}",
                path, min(len(raw), expected))
        ids = np.frombuffer(raw, dtype=_LE_U32, count=count, offset=8).reshape(num_queries, k)
        dists = np.frombuffer(raw, dtype="<f4", count=count, offset=8 + count * 4)
        return cls(ids, dists.reshape(num_queries, k))


def _read_bytes(path):
    try:
        with open(path, "rb") as handle:
            return handle.read()
    except OSError as e:
        raise DatasetLoadError(f"cannot read file: {e.strerror}", path)


def detect_format(path):
    suffix = os.path.splitext(str(path))[1].lower()
    fmt = suffix.lstrip(".")
    if fmt not in FORMATS:
        raise DatasetLoadError(f"unsupported format '{suffix}'", path)
    return fmt


def load(path, format=None, measure=Measure.SQUARED_L2):
    """ Reads a dataset in one of the "bin" formats (.fbin/.u8bin/.i8bin)
        or the per-vector formats (.fvecs/.bvecs). All integers little-endian.
    """
    fmt = format or detect_format(path)
    if fmt not in FORMATS:
        raise DatasetLoadError(f"unsupported element type for format '{fmt}'", path)
    elem_type = FORMATS[fmt]
    raw = _read_bytes(path)
    if "." + fmt in BIN_SUFFIXES:
        data = _decode_bin(raw, elem_type, path)
    else:
        data = _decode_vecs(raw, elem_type, path)
    logger.info("loaded %s: n=%d d=%d %s", path, data.shape[0], data.shape[1], elem_type.value)
    return Dataset(data, measure)


def _decode_bin(raw, elem_type, path):
    if len(raw) < 8:
        raise DatasetLoadError("truncated header", path, len(raw))
    n, d = (int(v) for v in np.frombuffer(raw, dtype=_LE_U32, count=2))
    if n == 0:
        raise DatasetLoadError("empty dataset", path, 0)
    if d == 0:
        raise DatasetLoadError("zero dimension", path, 4)
    itemsize = elem_type.dtype.itemsize
    expected = n * d * itemsize
    payload = len(raw) - 8
    if payload < expected:
        raise DatasetLoadError(
            f"truncated payload: header promises {expected} bytes, found {payload}",
            path, len(raw))
    if payload > expected:
        raise DatasetLoadError(
            f"header/body length mismatch: {payload - expected} trailing bytes",
            path, 8 + expected)
    dtype = elem_type.dtype.newbyteorder("<")
    data = np.frombuffer(raw, dtype=dtype, count=n * d, offset=8)
    return data.reshape(n, d).astype(elem_type.dtype)


def _decode_vecs(raw, elem_type, path):
    if len(raw) == 0:
        raise DatasetLoadError("empty dataset", path, 0)
    if len(raw) < 4:
        raise DatasetLoadError("truncated header", path, len(raw))
    d = int(np.frombuffer(raw, dtype=_LE_U32, count=1)[0])
    if d == 0:
        raise DatasetLoadError("zero dimension", path, 0)
    itemsize = elem_type.dtype.itemsize
    record = 4 + d * itemsize
    n, remainder = divmod(len(raw), record)
    if remainder:
        raise DatasetLoadError(
            f"truncated record: {remainder} bytes left over after {n} vectors",
            path, n * record)
    records = np.frombuffer(raw, dtype=np.uint8).reshape(n, record)
    dims = records[:, :4].copy().view(_LE_U32).ravel()
    bad = np.flatnonzero(dims != d)
    if len(bad):
        raise DatasetLoadError(
            f"vector {bad[0]} declares dimension {dims[bad[0]]}, expected {d}",
            path, int(bad[0]) * record)
    payload = np.ascontiguousarray(records[:, 4:])
    data = payload.view(elem_type.dtype.newbyteorder("<")).reshape(n, d)
    return data.astype(elem_type.dtype)


def save(dataset, path, format=None):
    fmt = format or detect_format(path)
    if FORMATS.get(fmt) is not dataset.elem_type:
        raise UsageError(f"format '{fmt}' cannot hold {dataset.elem_type.value} data")
    data = dataset.data.astype(dataset.data.dtype.newbyteorder("<"), copy=False)
    with open(path, "wb") as handle:
        if "." + fmt in BIN_SUFFIXES:
            handle.write(np.array([dataset.n, dataset.d], dtype=_LE_U32).tobytes())
            handle.write(data.tobytes())
        else:
            dims = np.full((dataset.n, 1), dataset.d, dtype=_LE_U32).view(np.uint8)
            body = data.view(np.uint8).reshape(dataset.n, -1)
            handle.write(np.hstack([dims, body]).tobytes())


def cluster_sizes(n, num_clusters):
    base, extra = divmod(n, num_clusters)
    return np.array([base + 1 if c < extra else base for c in range(num_clusters)])


def synthetic_labels(n, num_clusters):
    """ Cluster label of every point produced by `gen_synthetic`. """
    return np.repeat(np.arange(num_clusters), cluster_sizes(n, num_clusters))


def gen_synthetic(n, d, num_clusters, spread, seed, measure=Measure.SQUARED_L2):
    """ Gaussian blobs around centers drawn uniformly from [0,1]^d.
        Points are laid out cluster by cluster (see `synthetic_labels`).
    """
    if n < 1 or d < 1 or num_clusters < 1:
        raise UsageError("n, d and num_clusters must be at least 1")
    if spread < 0:
        raise UsageError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.random((num_clusters, d))
    labels = synthetic_labels(n, num_clusters)
    noise = rng.standard_normal((n, d)) * spread
    data = (centers[labels] + noise).astype(np.float32)
    return Dataset(data, measure)
