import json
from functools import wraps

from django.core.management.base import BaseCommand, CommandError

from annindex.config import RunConfig
from annindex.constants import Measure, PickMode
from annindex.exceptions import (
    UsageError,
    DatasetLoadError,
    ReservoirAllocationError,
    GraphValidationError,
)


def _int_list(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def reports_errors(handle):
    """ Turns library errors into CommandError, so the process exits
        nonzero with the message on stderr.
    """
    @wraps(handle)
    def wrapper(self, *args, **options):
        try:
            return handle(self, *args, **options)
        except (UsageError, DatasetLoadError, ReservoirAllocationError, GraphValidationError) as e:
            raise CommandError(str(e))
        except OSError as e:
            raise CommandError(f"{e.strerror or e}: {e.filename}")
    return wrapper


class IndexCommand(BaseCommand):
    """ Shared flags and output helpers of the index commands. """

    # RunConfig keys this command accepts as flags
    config_keys = ()

    _flags = {
        "dataset": dict(help="dataset file (.fbin/.u8bin/.i8bin/.fvecs/.bvecs)"),
        "queries": dict(help="query file"),
        "groundtruth": dict(help="ground-truth file"),
        "graph": dict(help="graph file"),
        "out": dict(help="output file"),
        "measure": dict(choices=[m.value for m in Measure], help="dissimilarity measure"),
        "threads": dict(type=int, help="worker threads for every phase"),
        "seed": dict(type=int),
        "cmax": dict(type=int, help="largest leaf size"),
        "cmin": dict(type=int, help="groups below this size get merged"),
        "p_samp": dict(type=float, help="fraction of a subproblem sampled as leaders"),
        "leader_cap": dict(type=int, help="most leaders per subproblem"),
        "fanout": dict(type=_int_list, help="comma list of per-depth fanout"),
        "replicas": dict(type=int, help="independent partitioning runs"),
        "k_leaf": dict(type=int, help="neighbors picked per point in a leaf"),
        "pick_mode": dict(choices=[m.value for m in PickMode]),
        "hash_bits": dict(type=int, help="residual hash bits (1-16)"),
        "reservoir": dict(type=int, help="reservoir slots per point"),
        "alpha": dict(type=float, help="prune slack, inf disables pruning"),
        "max_degree": dict(type=int, help="out-degree cap"),
        "beam": dict(type=_int_list, help="comma list of beam widths"),
        "k": dict(type=int, help="neighbors per query"),
        "start_sample": dict(type=int, help="sample size for the search start point"),
    }

    def add_arguments(self, parser):
        parser.add_argument("--config", help="key=value run configuration file")
        for key in self.config_keys:
            if key == "final_prune":
                parser.add_argument(
                    "--no-final-prune", dest="final_prune", action="store_false", default=None,
                    help="keep reservoir contents without the final prune")
                continue
            parser.add_argument("--" + key.replace("_", "-"), dest=key, default=None, **self._flags[key])

    def run_config(self, options):
        overrides = {key: options.get(key) for key in self.config_keys}
        return RunConfig.load(options.get("config"), overrides)

    def emit(self, values):
        """ One JSON stats block per run on stdout. """
        self.stdout.write(json.dumps(values, indent=2, sort_keys=True, default=str))
