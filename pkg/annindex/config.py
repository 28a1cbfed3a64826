"""
Run configuration for the management commands.

A run config is a `key=value` file read through python-decouple, so a
process environment variable of the same name overrides the file, and a
command-line flag overrides both.
"""
from dataclasses import dataclass, asdict

from decouple import Config, RepositoryEnv, RepositoryEmpty, Csv
from django.conf import settings

from annindex.builder import BuildParams
from annindex.constants import (
    Measure,
    PickMode,
    DEFAULT_CMAX,
    DEFAULT_CMIN,
    DEFAULT_P_SAMP,
    DEFAULT_LEADER_CAP,
    DEFAULT_FANOUT,
    DEFAULT_REPLICAS,
    DEFAULT_K_LEAF,
    DEFAULT_HASH_BITS,
    DEFAULT_RESERVOIR,
    DEFAULT_ALPHA,
    DEFAULT_MAX_DEGREE,
    DEFAULT_BEAMS,
    DEFAULT_START_SAMPLE,
    DEFAULT_SEED,
)
from annindex.exceptions import UsageError
from annindex.hashprune import HashParams
from annindex.leafbuild import LeafParams
from annindex.partition import PartitionParams
from annindex.pruning import PruneParams


def _csv_text(values):
    return ",".join(str(v) for v in values)


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    queries: str = ""
    groundtruth: str = ""
    graph: str = ""
    out: str = ""
    measure: Measure = Measure.SQUARED_L2
    threads: int = 1
    seed: int = DEFAULT_SEED
    cmax: int = DEFAULT_CMAX
    cmin: int = DEFAULT_CMIN
    p_samp: float = DEFAULT_P_SAMP
    leader_cap: int = DEFAULT_LEADER_CAP
    fanout: tuple = DEFAULT_FANOUT
    replicas: int = DEFAULT_REPLICAS
    k_leaf: int = DEFAULT_K_LEAF
    pick_mode: PickMode = PickMode.BIDIRECTED
    hash_bits: int = DEFAULT_HASH_BITS
    reservoir: int = DEFAULT_RESERVOIR
    alpha: float = DEFAULT_ALPHA
    max_degree: int = DEFAULT_MAX_DEGREE
    final_prune: bool = True
    beam: tuple = DEFAULT_BEAMS
    k: int = 10
    start_sample: int = DEFAULT_START_SAMPLE

    @staticmethod
    def keys():
        """ Every accepted key with its textual default and its cast. """
        return {
            "dataset": ("", str),
            "queries": ("", str),
            "groundtruth": ("", str),
            "graph": ("", str),
            "out": ("", str),
            "measure": (Measure.SQUARED_L2.value, Measure),
            "threads": (str(settings.ANNINDEX_THREADS), int),
            "seed": (str(DEFAULT_SEED), int),
            "cmax": (str(DEFAULT_CMAX), int),
            "cmin": (str(DEFAULT_CMIN), int),
            "p_samp": (str(DEFAULT_P_SAMP), float),
            "leader_cap": (str(DEFAULT_LEADER_CAP), int),
            "fanout": (_csv_text(DEFAULT_FANOUT), Csv(cast=int, post_process=tuple)),
            "replicas": (str(DEFAULT_REPLICAS), int),
            "k_leaf": (str(DEFAULT_K_LEAF), int),
            "pick_mode": (PickMode.BIDIRECTED.value, PickMode),
            "hash_bits": (str(DEFAULT_HASH_BITS), int),
            "reservoir": (str(DEFAULT_RESERVOIR), int),
            "alpha": (str(DEFAULT_ALPHA), float),
            "max_degree": (str(DEFAULT_MAX_DEGREE), int),
            "final_prune": ("True", bool),
            "beam": (_csv_text(DEFAULT_BEAMS), Csv(cast=int, post_process=tuple)),
            "k": ("10", int),
            "start_sample": (str(DEFAULT_START_SAMPLE), int),
        }

    @classmethod
    def load(cls, path=None, overrides=None):
        """ Config from an optional key=value file, the environment and
            `overrides` (flag values; None means "not given").
        """
        keys = cls.keys()
        if path:
            try:
                repository = RepositoryEnv(path)
            except OSError as e:
                raise UsageError(f"cannot read config file {path}: {e.strerror}")
            unknown = sorted(set(repository.data) - set(keys))
            if unknown:
                raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        else:
            repository = RepositoryEmpty()
        source = Config(repository)

        values = {}
        for key, (default, cast) in keys.items():
            try:
                values[key] = source(key, default=default, cast=cast)
            except ValueError as e:
                raise UsageError(f"bad value for config key {key}: {e}")

        for key, value in (overrides or {}).items():
            if key not in keys:
                raise UsageError(f"unknown config key: {key}")
            if value is not None:
                values[key] = value
        values["fanout"] = tuple(values["fanout"])
        values["beam"] = tuple(values["beam"])
        values["measure"] = Measure(values["measure"])
        values["pick_mode"] = PickMode(values["pick_mode"])
        config = cls(**values)
        if config.threads < 1:
            raise UsageError("threads must be at least 1")
        return config

    def require(self, *keys):
        missing = [key for key in keys if not getattr(self, key)]
        if missing:
            raise UsageError(f"missing required setting: {', '.join('--' + k.replace('_', '-') for k in missing)}")

    def build_params(self):
        return BuildParams(
            partition=PartitionParams(
                cmax=self.cmax, cmin=self.cmin, p_samp=self.p_samp,
                leader_cap=self.leader_cap, fanout=self.fanout,
                replicas=self.replicas, seed=self.seed),
            leaf=LeafParams(k=self.k_leaf, pick_mode=self.pick_mode),
            hash=HashParams(bits=self.hash_bits, reservoir=self.reservoir),
            prune=PruneParams(alpha=self.alpha, max_degree=self.max_degree),
            final_prune=self.final_prune,
        )

    def as_dict(self):
        values = asdict(self)
        values["measure"] = self.measure.value
        values["pick_mode"] = self.pick_mode.value
        values["fanout"] = list(self.fanout)
        values["beam"] = list(self.beam)
        return values
