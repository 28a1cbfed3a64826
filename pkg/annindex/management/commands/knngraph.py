import logging

import numpy as np
from django.core.management.base import CommandError

from annindex.builder import build_knn_graph
from annindex.dataset import load
from annindex.graph_search import brute_force_knn, recall_at
from annindex.management.base import IndexCommand, reports_errors
from annindex.management.commands.build import BUILD_KEYS

logger = logging.getLogger(__name__)


def exact_knn_excluding_self(dataset, k):
    """ Exact k nearest other points of every point. """
    truth = brute_force_knn(dataset, dataset, min(k + 1, dataset.n))
    rows = []
    for p, ids in enumerate(truth.ids.astype(np.int64)):
        rows.append([i for i in ids if i != p][:k])
    return np.array(rows, dtype=np.int64)


class Command(IndexCommand):
    help = "Build an index and export the approximate k-NN graph of all points."
    config_keys = tuple(key for key in BUILD_KEYS if key != "graph") + ("out", "k", "beam")

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--verify", action="store_true", help="compare against brute force")
        parser.add_argument("--target", type=float, default=0.95, help="recall required by --verify")
        parser.add_argument("--queue", action="store_true", help="export in a Celery worker")

    @reports_errors
    def handle(self, *args, **options):
        config = self.run_config(options)
        config.require("dataset", "out")
        # the widest beam given is the search width for every point
        beam = max(config.beam)
        if options["queue"]:
            from annindex.tasks import export_knn_graph
            result = export_knn_graph.delay(config.as_dict(), config.k, beam, config.out)
            self.emit({"task_id": str(result.id), "out": config.out})
            return

        dataset = load(config.dataset, measure=config.measure)
        knn, stats = build_knn_graph(dataset, config.build_params(), k=config.k, beam=beam,
                                     threads=config.threads)
        knn.save_tsv(config.out)
        values = {
            "out": config.out,
            "k": config.k,
            "beam": beam,
            "edges": int((knn.ids >= 0).sum()),
            "stats": stats.as_dict(),
        }
        recall = None
        if options["verify"]:
            k = min(config.k, dataset.n - 1)
            truth = exact_knn_excluding_self(dataset, k)
            recall = recall_at([row[row >= 0] for row in knn.ids], truth, k)
            values["recall"] = recall
            values["target"] = options["target"]
        self.emit(values)
        if recall is not None and recall < options["target"]:
            raise CommandError(f"k-NN graph recall {recall:.4f} is below target {options['target']}")
