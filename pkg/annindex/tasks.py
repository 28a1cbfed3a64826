import os
import logging

from celery import shared_task
from django.conf import settings

from annindex.builder import build_with_stats, build_knn_graph
from annindex.config import RunConfig
from annindex.dataset import load
from annindex.models import IndexBuild

logger = logging.getLogger(__name__)


def _report(e):
    if settings.SENTRY_DSN:
        import sentry_sdk
        sentry_sdk.capture_exception(e)
    else:
        logger.exception(e)


def default_graph_path(build_id):
    return os.path.join(settings.ANNINDEX_GRAPH_ROOT, f"{build_id}.graph")


@shared_task(bind=True)
def build_index(self, build_id, config):
    """ Builds the graph for a pending IndexBuild record. `config` holds
        RunConfig values (as produced by RunConfig.as_dict).
    """
    build = IndexBuild.objects.get(id=build_id)
    build.mark_running(task_id=str(self.request.id or ""))
    try:
        run = RunConfig.load(overrides=config)
        dataset = load(run.dataset, measure=run.measure)
        graph, stats = build_with_stats(dataset, run.build_params(), run.threads)
        graph_path = build.graph_path or default_graph_path(build.id)
        os.makedirs(os.path.dirname(os.path.abspath(graph_path)), exist_ok=True)
        graph.save(graph_path)
        if graph_path != build.graph_path:
            build.graph_path = graph_path
            build.save(update_fields=["graph_path", "updated_at"])
        build.mark_done(stats.as_dict())
    except Exception as e:
        build.mark_failed(e)
        _report(e)
    return str(build.id)


@shared_task(bind=True)
def export_knn_graph(self, config, k, beam, out):
    """ Builds an index and writes the k-NN edge table of all points to `out`.
    """
    try:
        run = RunConfig.load(overrides=config)
        dataset = load(run.dataset, measure=run.measure)
        knn, stats = build_knn_graph(dataset, run.build_params(), k=k, beam=beam, threads=run.threads)
        knn.save_tsv(out)
        return {"out": out, "k": k, "beam": beam, "build": stats.as_dict()}
    except Exception as e:
        _report(e)
        return None
