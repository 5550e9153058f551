from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, CommandParser

from l2rm.services import rearrange, vectorize_responses
from quantization.services import make_generator
from synthdata.golden import GOLDEN_FIXTURES
from synthdata.services import (
    GenSpec,
    LRMR_NOISE_LEVEL,
    gen_l2rm_dataset,
    gen_lowrank_theta,
    gen_lrmr_dataset,
    make_demo_blocks_l2rm,
    make_demo_theta_lrmr,
    make_shape_blocks,
    resolve_noise_std,
    save_matrix_csv,
)


class Command(BaseCommand):
    help = "Generate a synthetic truth and dataset and write them as CSV (one sample per column)."

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--out", type=str, default=None, help="Output directory.")
        parser.add_argument(
            "--truth",
            choices=["lowrank", "demo", "demo-l2rm", "shapes"],
            default="lowrank",
            help="Truth recipe: random low-rank, the 50x60 demo matrix, the four demo blocks or 0-1 shapes.",
        )
        parser.add_argument("--d1", type=int, default=50)
        parser.add_argument("--d2", type=int, default=60)
        parser.add_argument("--r", type=int, default=5)
        parser.add_argument("--n", type=int, default=1000)
        parser.add_argument(
            "--noise-level",
            type=float,
            default=LRMR_NOISE_LEVEL,
            help="Printed noise level; read as a variance unless --noise-as-std is given.",
        )
        parser.add_argument("--noise-as-std", action="store_true")
        parser.add_argument("--covariates", choices=["gaussian", "bernoulli"], default="gaussian")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument(
            "--golden",
            action="store_true",
            help="Write the seeded test fixtures to QUANTLAB_FIXTURES_DIR and exit.",
        )

    def handle(self, *args, **options):
        if options["golden"]:
            self.write_golden(Path(settings.QUANTLAB_FIXTURES_DIR))
            return
        out_dir = Path(options["out"] or settings.QUANTLAB_OUTPUT_DIR / "gen")
        rng = make_generator(options["seed"])
        try:
            noise_std = resolve_noise_std(options["noise_level"], options["noise_as_std"])
            truth = options["truth"]
            if truth in ("lowrank", "demo"):
                if truth == "lowrank":
                    spec = GenSpec(
                        d1=options["d1"], d2=options["d2"], r=options["r"],
                        n=options["n"], noise_std=noise_std, seed=options["seed"],
                    )
                    theta0 = gen_lowrank_theta(spec, rng)
                else:
                    theta0 = make_demo_theta_lrmr()
                data = gen_lrmr_dataset(theta0, options["n"], noise_std, rng, options["covariates"])
                save_matrix_csv(out_dir / "theta0.csv", theta0)
                save_matrix_csv(out_dir / "X.csv", data.X)
                save_matrix_csv(out_dir / "Y.csv", data.Y)
            else:
                blocks = make_demo_blocks_l2rm() if truth == "demo-l2rm" else make_shape_blocks()
                data = gen_l2rm_dataset(blocks, options["n"], noise_std, rng, options["covariates"])
                save_matrix_csv(out_dir / "theta0_rearranged.csv", rearrange(blocks))
                save_matrix_csv(out_dir / "X.csv", data.X)
                save_matrix_csv(out_dir / "Y.csv", vectorize_responses(data.Y))
        except ValueError as exc:
            raise CommandError(str(exc), returncode=1) from exc
        except OSError as exc:
            raise CommandError(f"Could not write to {out_dir}: {exc}", returncode=2) from exc

        self.stdout.write(self.style.SUCCESS(f"Generated {truth} dataset in {out_dir}."))

    def write_golden(self, fixtures_dir: Path) -> None:
        try:
            for name, build in GOLDEN_FIXTURES.items():
                save_matrix_csv(fixtures_dir / name, build())
        except OSError as exc:
            raise CommandError(f"Could not write to {fixtures_dir}: {exc}", returncode=2) from exc
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(GOLDEN_FIXTURES)} fixtures to {fixtures_dir}."))
