"""Shared plumbing for the ``run_*`` commands.

Every command takes ``--config``, ``--out``, ``--seed``, ``--set key=value``
(repeatable), ``--threads`` and ``--trials``, writes its files under the
output directory and registers the run in :class:`experiments.models.ExperimentRun`
unless ``--no-registry`` is given or ``QUANTLAB_REGISTRY`` is off.
Exit code 1 means a config or input problem, 2 a failure during the run.
"""

import logging
from pathlib import Path
from typing import Dict, Optional

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, CommandParser
from django.db import DatabaseError

from experiments.config import ConfigError, ExperimentConfig, load_experiment_config
from experiments.models import ExperimentRun
from experiments.reporting import emit_plot_script, jsonable, write_manifest, write_results
from experiments.services import ExperimentResult, SlopeFitError, fit_loglog_slope
from synthdata.services import DatasetParseError

logger = logging.getLogger(__name__)


class ExperimentCommand(BaseCommand):
    kind = "error_curve"

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument(
            "--config",
            type=str,
            required=True,
            help="Experiment JSON; relative names are also looked up in QUANTLAB_CONFIG_DIR.",
        )
        parser.add_argument(
            "--out",
            type=str,
            default=None,
            help="Output directory (default: QUANTLAB_OUTPUT_DIR/<config name>).",
        )
        parser.add_argument("--seed", type=int, default=None, help="Overrides base_seed.")
        parser.add_argument(
            "--set",
            action="append",
            dest="overrides",
            default=[],
            metavar="KEY=VALUE",
            help="Dotted-path override, e.g. --set delta2_grid=[0.2,0.4]. Repeatable.",
        )
        parser.add_argument(
            "--threads",
            type=int,
            default=None,
            help="Worker processes (default: QUANTLAB_THREADS, -1 for all cores).",
        )
        parser.add_argument("--trials", type=int, default=None, help="Overrides trials.")
        parser.add_argument(
            "--no-registry",
            action="store_false",
            dest="registry",
            default=None,
            help="Do not record the run in the ExperimentRun table (default: QUANTLAB_REGISTRY).",
        )

    def check_config(self, cfg: ExperimentConfig) -> None:
        """Reject configs this command cannot run; raise ConfigError."""

    def run_experiment(self, cfg: ExperimentConfig, threads: Optional[int]) -> Dict[str, ExperimentResult]:
        raise NotImplementedError

    def resolve_config_path(self, value: str) -> Path:
        path = Path(value)
        if not path.exists() and not path.is_absolute():
            candidate = Path(settings.QUANTLAB_CONFIG_DIR) / path
            if candidate.exists():
                return candidate
        return path

    def load_config(self, options) -> ExperimentConfig:
        overrides = list(options["overrides"] or [])
        if options["seed"] is not None:
            overrides.append(f"base_seed={options['seed']}")
        if options["trials"] is not None:
            overrides.append(f"trials={options['trials']}")
        cfg = load_experiment_config(self.resolve_config_path(options["config"]), overrides)
        self.check_config(cfg)
        return cfg

    def write_outputs(self, cfg: ExperimentConfig, results: Dict[str, ExperimentResult], out_dir: Path) -> Dict:
        outputs = {}
        for label, result in results.items():
            target = out_dir / label if label else out_dir
            paths = write_results(result, target)
            paths["plot"] = emit_plot_script(result, target, title=f"{cfg.name} {label}".strip())
            outputs[label or cfg.model] = sorted(str(p.relative_to(out_dir)) for p in paths.values())
        write_manifest(out_dir, jsonable(cfg.as_dict()), self.kind, outputs)
        return outputs

    def _register(self, cfg: ExperimentConfig, out_dir: Path) -> Optional[ExperimentRun]:
        try:
            return ExperimentRun.objects.create(
                code=cfg.name,
                kind=self.kind,
                model=cfg.model,
                schema_version=cfg.schema_version,
                config=jsonable(cfg.as_dict()),
                base_seed=cfg.base_seed,
                output_dir=str(out_dir),
            )
        except DatabaseError as exc:
            logger.warning("Run registry unavailable (%s); run %s is not recorded.", exc, cfg.name)
            return None

    def _fail(self, run: Optional[ExperimentRun], exc: Exception) -> None:
        if run is None:
            return
        try:
            run.fail(str(exc))
        except DatabaseError as db_exc:
            logger.warning("Could not mark run %s as failed: %s", run.code, db_exc)

    def report(self, cfg: ExperimentConfig, results: Dict[str, ExperimentResult]) -> None:
        for label, result in results.items():
            name = label or cfg.model
            self.stdout.write(f"{name}: {len(result.records)} records, {result.failed} failed")
            for delta1, delta2 in sorted({(d1, d2) for _, d1, d2 in result.cells()}):
                try:
                    slope = fit_loglog_slope(result.curve("frob_error", delta1, delta2))
                except SlopeFitError:
                    continue
                self.stdout.write(f"  delta1={delta1:g} delta2={delta2:g}: log-log slope {slope:.3f}")

    def handle(self, *args, **options):
        try:
            cfg = self.load_config(options)
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=1) from exc

        out_dir = Path(options["out"] or Path(settings.QUANTLAB_OUTPUT_DIR) / cfg.name)
        registry = options.get("registry")
        if registry is None:
            registry = settings.QUANTLAB_REGISTRY
        run = self._register(cfg, out_dir) if registry else None
        try:
            results = self.run_experiment(cfg, options["threads"])
            self.write_outputs(cfg, results, out_dir)
        except (ConfigError, DatasetParseError, FileNotFoundError) as exc:
            self._fail(run, exc)
            raise CommandError(str(exc), returncode=1) from exc
        except (OSError, ValueError, ArithmeticError) as exc:
            self._fail(run, exc)
            raise CommandError(f"Run {cfg.name} failed: {exc}", returncode=2) from exc

        if run is not None:
            try:
                run.finish(
                    record_count=sum(len(r.records) for r in results.values()),
                    failed_count=sum(r.failed for r in results.values()),
                )
            except DatabaseError as exc:
                logger.warning("Could not close run %s: %s", cfg.name, exc)

        self.report(cfg, results)
        self.stdout.write(self.style.SUCCESS(f"Run {cfg.name} complete. Wrote results to {out_dir}."))
