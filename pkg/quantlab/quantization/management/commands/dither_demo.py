import csv
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, CommandParser

from quantization.services import (
    DitherKind,
    make_generator,
    noise_moment_report,
    quantize_with_dither,
    sample_inputs,
)

DEMO_COLUMNS = ["kind", "delta", "n", "mean_noise", "var_noise", "mean_error", "ks_stat"]


class Command(BaseCommand):
    help = "Quantize synthetic signals with uniform and triangular dither and report noise moments."

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument(
            "--out",
            type=str,
            default=None,
            help="Output directory (default: QUANTLAB_OUTPUT_DIR/dither-demo).",
        )
        parser.add_argument("--n", type=int, default=1_000_000, help="Samples per row.")
        parser.add_argument(
            "--delta",
            type=float,
            action="append",
            dest="deltas",
            help="Quantization level; repeat for several (default: 0.5 and 1.0).",
        )
        parser.add_argument(
            "--inputs",
            choices=["gaussian", "uniform", "constant"],
            default="gaussian",
            help="Distribution of the quantized signal.",
        )
        parser.add_argument("--seed", type=int, default=0)

    def handle(self, *args, **options):
        if options["n"] < 1:
            raise CommandError("--n must be positive", returncode=1)
        deltas = options["deltas"] or [0.5, 1.0]
        out_dir = Path(options["out"] or settings.QUANTLAB_OUTPUT_DIR / "dither-demo")
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path = out_dir / "dither_demo.csv"

        rng = make_generator(options["seed"])
        signal = sample_inputs(options["inputs"], options["n"], rng)

        rows = []
        for kind in (DitherKind.UNIFORM, DitherKind.TRIANGULAR):
            for delta in deltas:
                record = quantize_with_dither(signal, delta, kind, rng)
                moments = noise_moment_report(record).as_dict()
                rows.append(
                    [kind.value, repr(float(delta)), options["n"]]
                    + [repr(moments[key]) for key in DEMO_COLUMNS[3:]]
                )

        with out_path.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(DEMO_COLUMNS)
            writer.writerows(rows)

        self.stdout.write(
            self.style.SUCCESS(f"Dither demo complete. Wrote {len(rows)} rows to {out_path}.")
        )
