from enum import Enum

import numpy as np


class ElemType(Enum):
    FLOAT32 = "float32"
    UINT8 = "uint8"
    INT8 = "int8"

    @property
    def dtype(self):
        return np.dtype(self.value)

    @property
    def is_integer(self):
        return self is not ElemType.FLOAT32


class Measure(Enum):
    SQUARED_L2 = "l2"
    MIPS = "mips"


class PickMode(Enum):
    DIRECTED = "directed"
    INVERTED = "inverted"
    BIDIRECTED = "bidirected"


# "bin" family: the suffix selects the element type of the payload.
BIN_SUFFIXES = {
    ".fbin": ElemType.FLOAT32,
    ".u8bin": ElemType.UINT8,
    ".i8bin": ElemType.INT8,
}

VECS_SUFFIXES = {
    ".fvecs": ElemType.FLOAT32,
    ".bvecs": ElemType.UINT8,
}

GRAPH_MAGIC = b"PIPG"
GRAPH_VERSION = 1
EMPTY_SLOT = 0xFFFFFFFF

# Partitioning
DEFAULT_CMAX = 1024
DEFAULT_CMIN = 100
DEFAULT_P_SAMP = 0.01
DEFAULT_LEADER_CAP = 1000
DEFAULT_FANOUT = (10, 3)
DEFAULT_REPLICAS = 1
MAX_CARVE_DEPTH = 64

# Leaf building
DEFAULT_K_LEAF = 2
GRAM_BLOCK = 64

# HashPrune
DEFAULT_HASH_BITS = 12
MAX_HASH_BITS = 16
DEFAULT_RESERVOIR = 64
SLOT_BYTES = 8

# Final prune / search
DEFAULT_ALPHA = 1.2
DEFAULT_MAX_DEGREE = 64
DEFAULT_START_SAMPLE = 1000
DEFAULT_BEAMS = (10, 20, 50, 100)
DEFAULT_SEED = 0
