import logging

from annindex.dataset import gen_synthetic, save
from annindex.management.base import IndexCommand, reports_errors

logger = logging.getLogger(__name__)


class Command(IndexCommand):
    help = "Generate a synthetic clustered float32 dataset."
    config_keys = ("out", "seed", "measure")

    def add_arguments(self, parser):
        parser.add_argument("n", type=int, help="number of points")
        parser.add_argument("d", type=int, help="dimension")
        parser.add_argument("clusters", type=int, help="number of Gaussian clusters")
        parser.add_argument("spread", type=float, help="standard deviation around each center")
        super().add_arguments(parser)

    @reports_errors
    def handle(self, *args, **options):
        config = self.run_config(options)
        config.require("out")
        dataset = gen_synthetic(
            options["n"], options["d"], options["clusters"], options["spread"],
            config.seed, config.measure)
        save(dataset, config.out)
        logger.info("wrote %r to %s", dataset, config.out)
        self.emit({
            "out": config.out,
            "n": dataset.n,
            "d": dataset.d,
            "seed": config.seed,
            "checksum": dataset.checksum(),
        })
