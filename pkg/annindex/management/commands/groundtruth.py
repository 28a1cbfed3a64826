import logging

from annindex.dataset import load
from annindex.graph_search import brute_force_knn
from annindex.management.base import IndexCommand, reports_errors
from annindex.utils import timed

logger = logging.getLogger(__name__)


class Command(IndexCommand):
    help = "Compute exact k nearest neighbors of every query by brute force."
    config_keys = ("dataset", "queries", "k", "out", "measure")

    @reports_errors
    def handle(self, *args, **options):
        config = self.run_config(options)
        config.require("dataset", "queries", "out")
        dataset = load(config.dataset, measure=config.measure)
        queries = load(config.queries, measure=config.measure)
        timings = {}
        with timed("groundtruth_s", timings):
            truth = brute_force_knn(dataset, queries, config.k)
        truth.save(config.out)
        logger.info("wrote %d x %d ground truth to %s", truth.num_queries, truth.k, config.out)
        self.emit({
            "out": config.out,
            "num_queries": truth.num_queries,
            "k": truth.k,
            **timings,
        })
