from experiments.config import ConfigError
from experiments.management.base import ExperimentCommand
from experiments.services import degradation_trend, run_real_data_study


class Command(ExperimentCommand):
    help = "Sweep quantization levels on a CSV dataset against the fit on unquantized data."
    kind = "real_data"

    def check_config(self, cfg):
        if cfg.data is None:
            raise ConfigError("run_real needs a data section with path_x and path_y", "data")

    def run_experiment(self, cfg, threads):
        return {"": run_real_data_study(cfg, threads)}

    def report(self, cfg, results):
        super().report(cfg, results)
        trend = degradation_trend(results[""])
        self.stdout.write(f"Spearman correlation of delta2 and relative error: {trend:.3f}")
