from django.test import TestCase

from annindex.models import IndexBuild, IndexBuildStatus


class ModelsTests(TestCase):
    def setUp(self):
        self.build = IndexBuild.objects.create(dataset_path="/data/base.fbin")

    def test_new_build_is_pending(self):
        self.assertEqual(self.build.status, IndexBuildStatus.PENDING)
        self.assertEqual(self.build.error, "")

    def test_record_creates_done_build_with_stats(self):
        build = IndexBuild.record("/data/base.fbin", "/data/base.graph", {"cmax": 512}, {"leaf_count": 3})
        self.assertEqual(build.status, IndexBuildStatus.DONE)
        self.assertEqual(IndexBuild.objects.get(id=build.id).params, {"cmax": 512})

    def test_mark_running_keeps_existing_task_id_when_none_given(self):
        self.build.task_id = "abc"
        self.build.save()
        self.build.mark_running()
        self.build.refresh_from_db()
        self.assertEqual(self.build.status, IndexBuildStatus.RUNNING)
        self.assertEqual(self.build.task_id, "abc")

    def test_mark_failed_stores_message(self):
        self.build.mark_failed(ValueError("bad header"))
        self.build.refresh_from_db()
        self.assertEqual(self.build.status, IndexBuildStatus.FAILED)
        self.assertEqual(self.build.error, "bad header")

    def test_mark_done_clears_previous_error(self):
        self.build.mark_failed("boom")
        self.build.mark_done({"leaf_count": 1})
        self.build.refresh_from_db()
        self.assertEqual(self.build.error, "")
        self.assertEqual(self.build.stats, {"leaf_count": 1})

    def test_builds_are_listed_newest_first(self):
        newer = IndexBuild.objects.create(dataset_path="/data/other.fbin")
        self.assertEqual(IndexBuild.objects.first(), newer)

    def test_str_shows_dataset_and_status(self):
        self.assertEqual(str(self.build), "/data/base.fbin [pending]")
