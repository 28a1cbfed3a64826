import uuid

from django.db import models


class IndexBuildStatus(models.TextChoices):
    PENDING = "pending", "Pending"
    RUNNING = "running", "Running"
    DONE = "done", "Done"
    FAILED = "failed", "Failed"


class IndexBuild(models.Model):
    """ One graph build, synchronous or queued through Celery. """
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    status = models.CharField(
        max_length=16, choices=IndexBuildStatus.choices,
        default=IndexBuildStatus.PENDING, db_index=True)
    dataset_path = models.CharField(max_length=500)
    graph_path = models.CharField(max_length=500, blank=True, default="")
    params = models.JSONField(blank=True, null=True)
    stats = models.JSONField(blank=True, null=True)
    error = models.TextField(blank=True, default="")
    task_id = models.CharField(max_length=255, blank=True, default="")
    created_at = models.DateTimeField(auto_now_add=True, db_index=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.dataset_path} [{self.status}]"

    @classmethod
    def record(cls, dataset_path, graph_path, params, stats=None, status=IndexBuildStatus.DONE):
        """ Creates a build record
        """
        return cls.objects.create(
            dataset_path=str(dataset_path),
            graph_path=str(graph_path),
            params=params,
            stats=stats,
            status=status,
        )

    def mark_running(self, task_id=""):
        self.status = IndexBuildStatus.RUNNING
        self.task_id = task_id or self.task_id
        self.save(update_fields=["status", "task_id", "updated_at"])

    def mark_done(self, stats):
        self.status = IndexBuildStatus.DONE
        self.stats = stats
        self.error = ""
        self.save(update_fields=["status", "stats", "error", "updated_at"])

    def mark_failed(self, error):
        self.status = IndexBuildStatus.FAILED
        self.error = str(error)
        self.save(update_fields=["status", "error", "updated_at"])
