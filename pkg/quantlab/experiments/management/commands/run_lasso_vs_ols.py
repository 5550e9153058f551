from experiments.management.base import ExperimentCommand
from experiments.services import run_lasso_vs_ols


class Command(ExperimentCommand):
    help = "Compare the regularized Lasso with least squares on identical quantized data."
    kind = "lasso_vs_ols"

    def run_experiment(self, cfg, threads):
        return dict(run_lasso_vs_ols(cfg, threads).items())
