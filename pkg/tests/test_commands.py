import json
import os
import tempfile
from io import StringIO
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from annindex.dataset import Dataset, GroundTruth, gen_synthetic, load, save
from annindex.graph_search import NavGraph, brute_force_knn
from annindex.models import IndexBuild, IndexBuildStatus

SMALL_FLAGS = dict(cmax=256, cmin=32, fanout=(4, 2), threads=2)


def run(*args, **options):
    out = StringIO()
    call_command(*args, stdout=out, stderr=StringIO(), **options)
    return out.getvalue()


def last_json(output):
    return json.loads(output[output.index("{"):])


class CommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.base = self.path("base.fbin")
        self.queries = self.path("queries.fbin")
        dataset = gen_synthetic(1200, 8, 10, 0.3, seed=1)
        save(Dataset(dataset.data[:1000]), self.base)
        save(Dataset(dataset.data[1000:1050]), self.queries)

    def path(self, name):
        return os.path.join(self.tmp, name)

    def test_gen_writes_header_and_reports_checksum(self):
        out = self.path("gen.fbin")
        stats = json.loads(run("gen", 1000, 16, 10, 0.01, seed=3, out=out))
        with open(out, "rb") as handle:
            self.assertEqual(np.frombuffer(handle.read(8), dtype="<u4").tolist(), [1000, 16])
        self.assertEqual(stats["checksum"], load(out).checksum())

    def test_gen_is_deterministic(self):
        first, second = self.path("a.fbin"), self.path("b.fbin")
        run("gen", 100, 4, 3, 0.1, seed=5, out=first)
        run("gen", 100, 4, 3, 0.1, seed=5, out=second)
        with open(first, "rb") as a, open(second, "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_gen_without_output_fails(self):
        with self.assertRaises(CommandError):
            run("gen", 10, 2, 2, 0.1)

    def test_groundtruth_matches_module_oracle_byte_for_byte(self):
        out = self.path("gt.bin")
        run("groundtruth", dataset=self.base, queries=self.queries, k=10, out=out)
        expected = self.path("expected.bin")
        brute_force_knn(load(self.base), load(self.queries), 10).save(expected)
        with open(out, "rb") as a, open(expected, "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_groundtruth_of_dataset_points_puts_each_first(self):
        out = self.path("self.bin")
        run("groundtruth", dataset=self.base, queries=self.base, k=1, out=out)
        truth = GroundTruth.load(out)
        self.assertEqual((truth.num_queries, truth.k), (1000, 1))
        self.assertEqual(truth.ids[:, 0].tolist(), list(range(1000)))

    def test_build_writes_valid_graph_and_phase_timings(self):
        graph_path = self.path("base.graph")
        stats = json.loads(run("build", dataset=self.base, graph=graph_path, **SMALL_FLAGS))
        graph = NavGraph.load(graph_path)
        self.assertEqual(graph.n, 1000)
        self.assertLessEqual(int(graph.out_degrees().max()), 64)
        for phase in ("partition_s", "leaf_build_s", "final_prune_s"):
            self.assertIn(phase, stats["stats"])
        self.assertEqual(sum(stats["degree_histogram"]), 1000)

    def test_build_reads_config_file_and_flags_override_it(self):
        config = self.path("run.env")
        with open(config, "w") as handle:
            handle.write(f"dataset={self.base}\ncmax=256\ncmin=32\nmax_degree=16\nthreads=1\n")
        graph_path = self.path("cfg.graph")
        stats = json.loads(run("build", config=config, graph=graph_path, max_degree=12))
        self.assertEqual(stats["params"]["prune"]["max_degree"], 12)
        self.assertLessEqual(int(NavGraph.load(graph_path).out_degrees().max()), 12)

    def test_build_leaves_dump_lists_leaves(self):
        leaves = self.path("leaves.txt")
        run("build", dataset=self.base, graph=self.path("l.graph"), leaves=leaves, **SMALL_FLAGS)
        with open(leaves) as handle:
            lines = handle.read().splitlines()
        self.assertTrue(lines[0].startswith("0: "))

    def test_build_record_persists_a_done_row(self):
        stats = json.loads(run("build", dataset=self.base, graph=self.path("r.graph"), record=True, **SMALL_FLAGS))
        build = IndexBuild.objects.get(id=stats["build_id"])
        self.assertEqual(build.status, IndexBuildStatus.DONE)
        self.assertEqual(build.stats["leaf_count"], stats["stats"]["leaf_count"])

    @mock.patch("annindex.tasks.build_index.delay")
    def test_build_queue_creates_pending_row_and_dispatches(self, mock_delay):
        mock_delay.return_value = mock.Mock(id="task-1")
        stats = json.loads(run("build", dataset=self.base, queue=True, cmax=256, cmin=32))
        build = IndexBuild.objects.get(id=stats["build_id"])
        self.assertEqual(build.status, IndexBuildStatus.PENDING)
        self.assertEqual(build.task_id, "task-1")
        mock_delay.assert_called_once()
        self.assertEqual(mock_delay.call_args[0][0], str(build.id))

    def test_build_with_invalid_params_fails(self):
        with self.assertRaises(CommandError):
            run("build", dataset=self.base, graph=self.path("x.graph"), cmax=10, cmin=20)

    def test_build_with_truncated_dataset_fails(self):
        broken = self.path("broken.fbin")
        with open(broken, "wb") as handle:
            handle.write(np.array([2, 3], dtype="<u4").tobytes() + b"\x00" * 20)
        with self.assertRaises(CommandError) as ctx:
            run("build", dataset=broken, graph=self.path("b.graph"))
        self.assertIn("truncated", str(ctx.exception))

    def test_search_reports_one_row_per_beam_width(self):
        graph_path = self.path("s.graph")
        gt = self.path("s-gt.bin")
        run("build", dataset=self.base, graph=graph_path, **SMALL_FLAGS)
        run("groundtruth", dataset=self.base, queries=self.queries, k=10, out=gt)
        output = run("search", graph=graph_path, dataset=self.base, queries=self.queries,
                     groundtruth=gt, beam=(10, 20, 50), k=10)
        table = output.split("\n\n")[0].splitlines()
        self.assertEqual(table[0].split("\t"), ["L", "recall", "mean_visited", "mean_comparisons", "qps"])
        self.assertEqual([int(row.split("\t")[0]) for row in table[1:]], [10, 20, 50])
        rows = last_json(output)["rows"]
        recalls = [row["recall"] for row in rows]
        self.assertGreaterEqual(recalls[-1], recalls[0])

    def test_search_with_graph_of_other_dataset_fails(self):
        graph_path = self.path("other.graph")
        NavGraph(10, 4).save(graph_path)
        gt = self.path("o-gt.bin")
        run("groundtruth", dataset=self.base, queries=self.queries, k=10, out=gt)
        with self.assertRaises(CommandError):
            run("search", graph=graph_path, dataset=self.base, queries=self.queries, groundtruth=gt)

    def test_knngraph_writes_edge_table_and_verifies(self):
        out = self.path("knn.tsv")
        output = run("knngraph", dataset=self.base, out=out, k=5, beam=(40,), verify=True,
                     target=0.8, **SMALL_FLAGS)
        stats = last_json(output)
        with open(out) as handle:
            lines = handle.read().splitlines()
        self.assertLessEqual(len(lines), 1000 * 5)
        self.assertEqual(len(lines), stats["edges"])
        self.assertGreaterEqual(stats["recall"], 0.8)

    def test_knngraph_below_target_fails(self):
        with self.assertRaises(CommandError):
            run("knngraph", dataset=self.base, out=self.path("bad.tsv"), k=5, beam=(5,),
                verify=True, target=1.01, **SMALL_FLAGS)

    def test_knngraph_is_deterministic(self):
        first, second = self.path("k1.tsv"), self.path("k2.tsv")
        run("knngraph", dataset=self.base, out=first, k=4, beam=(20,), **SMALL_FLAGS)
        run("knngraph", dataset=self.base, out=second, k=4, beam=(20,), seed=0, threads=1,
            cmax=256, cmin=32, fanout=(4, 2))
        with open(first) as a, open(second) as b:
            self.assertEqual(a.read(), b.read())

    @mock.patch("annindex.tasks.export_knn_graph.delay")
    def test_knngraph_queue_dispatches_task(self, mock_delay):
        mock_delay.return_value = mock.Mock(id="task-2")
        stats = json.loads(run("knngraph", dataset=self.base, out=self.path("q.tsv"), k=3,
                               beam=(10,), queue=True))
        self.assertEqual(stats["task_id"], "task-2")
        args = mock_delay.call_args[0]
        self.assertEqual(args[1:], (3, 10, self.path("q.tsv")))
