from pathlib import Path

from experiments.management.base import ExperimentCommand
from experiments.reporting import jsonable, write_json, write_manifest
from experiments.services import LAMBDA_MULTIPLIERS, calibrate_lambda_scale


class Command(ExperimentCommand):
    help = "Pilot search for the lambda scale of a recipe; writes calibration.json."
    kind = "calibration"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            "--multiplier",
            type=float,
            action="append",
            dest="multipliers",
            help="Multiple of the configured lambda_scale to try; repeatable (default: 0.5, 1, 2, 4).",
        )

    def handle(self, *args, **options):
        self.multipliers = tuple(options["multipliers"] or LAMBDA_MULTIPLIERS)
        return super().handle(*args, **options)

    def run_experiment(self, cfg, threads):
        self.calibration = calibrate_lambda_scale(cfg, self.multipliers, threads)
        return {}

    def write_outputs(self, cfg, results, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(
            out_dir / "calibration.json",
            {
                "best_lambda_scale": self.calibration.best_scale,
                "mean_frob_error": {repr(k): v for k, v in self.calibration.mean_errors.items()},
            },
        )
        write_manifest(out_dir, jsonable(cfg.as_dict()), self.kind, {"calibration": ["calibration.json"]})
        return {}

    def report(self, cfg, results):
        for scale, error in sorted(self.calibration.mean_errors.items()):
            self.stdout.write(f"lambda_scale={scale:g}: mean frob_error {error:.4g}")
        self.stdout.write(f"Best lambda_scale: {self.calibration.best_scale:g}")
