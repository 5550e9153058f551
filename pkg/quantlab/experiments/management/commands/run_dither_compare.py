from experiments.management.base import ExperimentCommand
from experiments.services import floor_ratio, run_dither_comparison


class Command(ExperimentCommand):
    help = "Run one sweep with dithered and one with direct quantization on identical data."
    kind = "dither_comparison"

    def run_experiment(self, cfg, threads):
        return dict(run_dither_comparison(cfg, threads).items())

    def report(self, cfg, results):
        super().report(cfg, results)
        undithered = results["undithered"]
        for delta1, delta2 in sorted({(d1, d2) for _, d1, d2 in undithered.cells()}):
            if len(undithered.curve("frob_error", delta1, delta2)) < 2:
                continue
            ratio = floor_ratio(undithered, delta1, delta2)
            self.stdout.write(
                f"  undithered delta2={delta2:g}: error at largest n / error at mid n = {ratio:.3f}"
            )
