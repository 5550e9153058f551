from experiments.config import ConfigError
from experiments.management.base import ExperimentCommand
from experiments.services import run_error_curve


class Command(ExperimentCommand):
    help = "Error-versus-n sweep for the vector-response estimators (constrained, regularized or OLS)."
    kind = "error_curve"

    def check_config(self, cfg):
        if cfg.model == "l2rm":
            raise ConfigError("run_lrmr handles vector responses; use run_l2rm", "model")

    def run_experiment(self, cfg, threads):
        return {"": run_error_curve(cfg, threads)}
