import math

import numpy as np
from django.test import SimpleTestCase

from annindex.dataset import Dataset, gen_synthetic
from annindex.exceptions import UsageError
from annindex.partition import (
    LeafSet,
    PartitionParams,
    assign_to_leaders,
    carve,
    leaders,
    merge_small,
)
from annindex.utils import rng_for


def canonical(leafset):
    return sorted(tuple(int(i) for i in leaf) for leaf in leafset)


class PartitionParamsTests(SimpleTestCase):
    def test_cmin_must_be_below_cmax(self):
        with self.assertRaises(UsageError):
            PartitionParams(cmax=100, cmin=100)

    def test_fanout_beyond_listed_depths_is_one(self):
        params = PartitionParams(fanout=(4, 2))
        self.assertEqual([params.fanout_at(d) for d in range(4)], [4, 2, 1, 1])

    def test_leader_count_is_clamped(self):
        params = PartitionParams(p_samp=0.01, leader_cap=1000)
        self.assertEqual(params.leader_count(50), 2)
        self.assertEqual(params.leader_count(5000), 50)
        self.assertEqual(params.leader_count(10 ** 6), 1000)
        self.assertEqual(params.leader_count(1), 1)


class LeaderTests(SimpleTestCase):
    def test_leaders_are_distinct_members(self):
        ids = np.arange(100, 200)
        chosen = leaders(ids, 10, rng_for(0))
        self.assertEqual(len(set(chosen.tolist())), 10)
        self.assertTrue(set(chosen.tolist()) <= set(ids.tolist()))

    def test_full_draw_is_a_permutation(self):
        ids = np.arange(10)
        self.assertEqual(sorted(leaders(ids, 10, rng_for(1)).tolist()), ids.tolist())

    def test_single_leader_is_drawn_uniformly(self):
        ids = np.arange(10)
        rng = rng_for(4)
        draws = np.concatenate([leaders(ids, 1, rng) for _ in range(10_000)])
        frequencies = np.bincount(draws, minlength=10) / len(draws)
        self.assertTrue((np.abs(frequencies - 0.1) <= 0.03).all(), frequencies)

    def test_drawing_more_leaders_than_points_fails(self):
        with self.assertRaises(UsageError):
            leaders(np.arange(3), 4, rng_for(0))

    def test_assignment_with_fanout_two_puts_each_point_in_two_groups(self):
        dataset = Dataset(np.array([[0.0], [1.0], [2.0], [10.0]], dtype=np.float32))
        ids = np.arange(4)
        groups = assign_to_leaders(dataset, ids, np.array([3, 0]), 2)
        self.assertEqual([g.tolist() for g in groups], [[0, 1, 2, 3], [0, 1, 2, 3]])

    def test_assignment_ties_go_to_smaller_leader_id(self):
        dataset = Dataset(np.array([[0.0], [1.0], [2.0]], dtype=np.float32))
        groups = assign_to_leaders(dataset, np.arange(3), np.array([2, 0]), 1)
        self.assertEqual([g.tolist() for g in groups], [[0, 1], [2]])


class MergeSmallTests(SimpleTestCase):
    def test_group_with_no_feasible_partner_stays_small(self):
        groups = [np.arange(1000), np.arange(1000, 1050)]
        merged = merge_small(groups, 100, 1024, rng_for(0))
        self.assertEqual(sorted(len(g) for g in merged), [50, 1000])

    def test_two_small_groups_merge(self):
        groups = [np.arange(50), np.arange(50, 110)]
        merged = merge_small(groups, 100, 1024, rng_for(0))
        self.assertEqual(len(merged), 1)
        self.assertEqual(merged[0].tolist(), list(range(110)))

    def test_overlapping_groups_merge_when_their_union_fits(self):
        merged = merge_small([np.arange(60), np.arange(80)], 100, 100, rng_for(0))
        self.assertEqual(len(merged), 1)
        self.assertEqual(merged[0].tolist(), list(range(80)))

    def test_overlapping_group_stays_small_only_when_every_union_is_too_big(self):
        for trial in range(100):
            rng = np.random.default_rng(trial)
            groups = [np.unique(rng.integers(0, 600, size=rng.integers(1, 300)))
                      for _ in range(rng.integers(2, 8))]
            merged = merge_small(groups, 100, 250, rng_for(trial))
            self.assertEqual(
                np.unique(np.concatenate(merged)).tolist(), np.unique(np.concatenate(groups)).tolist())
            for i, group in enumerate(merged):
                if len(group) < 100:
                    for j, other in enumerate(merged):
                        if j != i:
                            self.assertGreater(len(np.union1d(group, other)), 250)

    def test_empty_groups_are_dropped(self):
        merged = merge_small([np.arange(0), np.arange(200)], 100, 1024, rng_for(0))
        self.assertEqual(len(merged), 1)

    def test_merge_rules_hold_on_random_groups(self):
        for trial in range(200):
            rng = np.random.default_rng(trial)
            sizes = rng.integers(1, 400, size=rng.integers(1, 12))
            bounds = np.concatenate([[0], np.cumsum(sizes)])
            groups = [np.arange(bounds[i], bounds[i + 1]) for i in range(len(sizes))]
            merged = merge_small(groups, 100, 500, rng_for(trial))

            self.assertEqual(
                np.sort(np.concatenate(merged)).tolist(), list(range(int(bounds[-1]))))
            final = [len(g) for g in merged]
            for i, size in enumerate(final):
                self.assertTrue(size <= 500 or size in sizes.tolist())
                if size < 100 and len(final) > 1:
                    others = final[:i] + final[i + 1:]
                    self.assertTrue(all(size + other > 500 for other in others))


class CarveTests(SimpleTestCase):
    def setUp(self):
        self.dataset = gen_synthetic(3000, 8, 12, 0.2, seed=7)

    def test_small_dataset_is_one_leaf(self):
        leafset = carve(self.dataset, PartitionParams(cmax=4096, cmin=10))
        self.assertEqual(len(leafset), 1)
        self.assertEqual(leafset.leaves[0].tolist(), list(range(3000)))

    def test_leaves_respect_size_and_multiplicity_bounds(self):
        params = PartitionParams(cmax=256, cmin=32, p_samp=0.02, fanout=(3, 2))
        leafset = carve(self.dataset, params)
        self.assertTrue((leafset.sizes() <= 256).all())
        memberships = leafset.memberships(self.dataset.n)
        self.assertTrue((memberships >= 1).all())
        self.assertTrue((memberships <= 6).all())

    def test_leaves_are_sorted_without_duplicates(self):
        leafset = carve(self.dataset, PartitionParams(cmax=256, cmin=32, fanout=(2,)))
        for leaf in leafset:
            self.assertTrue((np.diff(leaf) > 0).all())

    def test_replicas_multiply_coverage(self):
        params = PartitionParams(cmax=256, cmin=32, fanout=(2,), replicas=3)
        memberships = carve(self.dataset, params).memberships(self.dataset.n)
        self.assertTrue((memberships >= 3).all())
        self.assertTrue((memberships <= 6).all())

    def test_result_does_not_depend_on_worker_count(self):
        params = PartitionParams(cmax=200, cmin=20, fanout=(3, 2), seed=5)
        serial = carve(self.dataset, params, workers=1)
        parallel = carve(self.dataset, params, workers=6)
        self.assertEqual(canonical(serial), canonical(parallel))
        self.assertEqual(serial.max_depth, parallel.max_depth)

    def test_different_seeds_give_different_partitions(self):
        a = carve(self.dataset, PartitionParams(cmax=200, cmin=20, seed=1))
        b = carve(self.dataset, PartitionParams(cmax=200, cmin=20, seed=2))
        self.assertNotEqual(canonical(a), canonical(b))

    def test_identical_points_fall_back_to_random_splitting(self):
        dataset = Dataset(np.zeros((3000, 4), dtype=np.float32))
        params = PartitionParams(cmax=1024, cmin=100, fanout=(2,))
        with self.assertLogs("annindex.partition", level="WARNING"):
            leafset = carve(dataset, params)
        self.assertTrue((leafset.sizes() <= 1024).all())
        memberships = leafset.memberships(3000)
        self.assertTrue(((memberships >= 1) & (memberships <= 2)).all())

    def test_fuzzed_partitions_respect_bounds(self):
        for trial in range(50):
            rng = np.random.default_rng(100 + trial)
            n = int(rng.integers(50, 2500))
            dataset = gen_synthetic(n, int(rng.integers(2, 12)), int(rng.integers(1, 20)),
                                    float(rng.uniform(0.0, 0.5)), seed=trial)
            cmax = int(rng.integers(20, 400))
            fanout = tuple(int(f) for f in rng.integers(1, 4, size=rng.integers(0, 3)))
            replicas = int(rng.integers(1, 3))
            params = PartitionParams(
                cmax=cmax, cmin=int(rng.integers(1, cmax)), p_samp=float(rng.uniform(0.005, 0.2)),
                fanout=fanout, replicas=replicas, seed=trial)
            leafset = carve(dataset, params)
            self.assertTrue((leafset.sizes() <= cmax).all())
            memberships = leafset.memberships(n)
            self.assertTrue((memberships >= replicas).all())
            self.assertTrue((memberships <= math.prod(fanout) * replicas).all())

    def test_depth_grows_logarithmically(self):
        dataset = gen_synthetic(20_000, 8, 20, 0.1, seed=3)
        params = PartitionParams(cmax=256, cmin=32, p_samp=0.01, fanout=(2,))
        leafset = carve(dataset, params)
        fanin = params.leader_count(dataset.n)
        bound = 2 * math.ceil(math.log(dataset.n) / math.log(fanin)) + 4
        self.assertLessEqual(leafset.max_depth, bound)

    def test_dump_lists_one_leaf_per_line(self):
        leafset = LeafSet([np.array([0, 2]), np.array([1])])
        self.assertEqual(leafset.dumps(), "0: 0 2\n1: 1\n")
