import logging

from annindex.builder import build_with_stats
from annindex.dataset import load
from annindex.management.base import IndexCommand, reports_errors
from annindex.models import IndexBuild

logger = logging.getLogger(__name__)

BUILD_KEYS = (
    "dataset", "graph", "measure", "threads", "seed",
    "cmax", "cmin", "p_samp", "leader_cap", "fanout", "replicas",
    "k_leaf", "pick_mode", "hash_bits", "reservoir",
    "alpha", "max_degree", "final_prune",
)


class Command(IndexCommand):
    help = "Build a navigable graph index over a dataset."
    config_keys = BUILD_KEYS

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--leaves", help="write the leaf partition to this text file")
        parser.add_argument("--record", action="store_true", help="persist the run as an IndexBuild")
        parser.add_argument("--queue", action="store_true", help="build in a Celery worker")

    @reports_errors
    def handle(self, *args, **options):
        config = self.run_config(options)
        if options["queue"]:
            config.require("dataset")
            return self.enqueue(config)

        config.require("dataset", "graph")
        params = config.build_params()
        dataset = load(config.dataset, measure=config.measure)
        logger.info("building over %r with %d threads", dataset, config.threads)
        graph, stats = build_with_stats(dataset, params, config.threads, options["leaves"])
        graph.save(config.graph)

        values = {
            "graph": config.graph,
            "dataset": config.dataset,
            "params": params.as_dict(),
            "stats": stats.as_dict(),
            "degree_histogram": graph.degree_histogram().tolist(),
        }
        if options["record"]:
            build = IndexBuild.record(config.dataset, config.graph, config.as_dict(), stats.as_dict())
            values["build_id"] = str(build.id)
        self.emit(values)

    def enqueue(self, config):
        from annindex.tasks import build_index

        build = IndexBuild.objects.create(
            dataset_path=config.dataset,
            graph_path=config.graph,
            params=config.as_dict(),
        )
        result = build_index.delay(str(build.id), config.as_dict())
        build.task_id = str(result.id)
        build.save(update_fields=["task_id", "updated_at"])
        self.emit({"build_id": str(build.id), "task_id": build.task_id, "status": build.status})
