import logging

from annindex.dataset import GroundTruth, load
from annindex.exceptions import UsageError
from annindex.graph_search import NavGraph, choose_start, evaluate
from annindex.management.base import IndexCommand, reports_errors

logger = logging.getLogger(__name__)


class Command(IndexCommand):
    help = "Search a graph with a sweep of beam widths and report recall and cost."
    config_keys = (
        "graph", "dataset", "queries", "groundtruth", "measure",
        "beam", "k", "start_sample", "seed",
    )

    @reports_errors
    def handle(self, *args, **options):
        config = self.run_config(options)
        config.require("graph", "dataset", "queries", "groundtruth")
        dataset = load(config.dataset, measure=config.measure)
        queries = load(config.queries, measure=config.measure)
        truth = GroundTruth.load(config.groundtruth)
        graph = NavGraph.load(config.graph)
        if graph.n != dataset.n:
            raise UsageError(f"graph has {graph.n} points but the dataset has {dataset.n}")

        start = choose_start(dataset, config.start_sample, config.seed)
        logger.info("searching %d queries from start point %d", queries.n, start)
        reports = evaluate(graph, dataset, queries, truth, config.k, config.beam, start)

        self.stdout.write("L\trecall\tmean_visited\tmean_comparisons\tqps")
        for report in reports:
            self.stdout.write(report.as_row())
        self.stdout.write("")
        self.emit({
            "graph": config.graph,
            "k": config.k,
            "start": start,
            "rows": [vars(report) for report in reports],
        })
