"""Single entry point with hyphenated subcommands, e.g. ``python -m quantlab.cli run-lrmr --config partial_quantization.json``.

Each subcommand is a management command; this module only maps names,
parses flags and turns failures into exit codes (1 for usage and config
errors, 2 for runtime errors).
"""

import logging
import os
import sys
from typing import List, Optional

logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    "dither-demo": ("quantization", "dither_demo"),
    "gen": ("synthdata", "gen"),
    "run-lrmr": ("experiments", "run_lrmr"),
    "run-l2rm": ("experiments", "run_l2rm"),
    "run-dither-compare": ("experiments", "run_dither_compare"),
    "run-lasso-vs-ols": ("experiments", "run_lasso_vs_ols"),
    "run-real": ("experiments", "run_real"),
    "calibrate-lambda": ("experiments", "calibrate_lambda"),
}


def usage() -> str:
    names = "\n".join(f"  {name}" for name in SUBCOMMANDS)
    return f"usage: quantlab <subcommand> [options]\n\nsubcommands:\n{names}\n"


def parse_and_dispatch(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        sys.stdout.write(usage())
        return 0 if argv else 1
    if argv[0] not in SUBCOMMANDS:
        sys.stderr.write(f"Unknown subcommand {argv[0]!r}.\n{usage()}")
        return 1

    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "quantlab.settings")
    import django
    from django.core.management import call_command, load_command_class
    from django.core.management.base import CommandError

    django.setup()
    subcommand, rest = argv[0], argv[1:]
    app_name, command_name = SUBCOMMANDS[subcommand]
    command = load_command_class(app_name, command_name)
    parser = command.create_parser("quantlab", subcommand)
    try:
        # not called from the command line, so argparse errors raise CommandError
        options = vars(parser.parse_args(rest))
        args = options.pop("args", ())
        call_command(command, *args, **options)
    except SystemExit as exc:
        # --help
        return exc.code or 0
    except CommandError as exc:
        message = str(exc)
        if message.startswith("Error: "):
            # argparse rejected the flags
            sys.stderr.write(parser.format_usage())
        else:
            message = f"Error: {message}"
        sys.stderr.write(message + "\n")
        return exc.returncode
    except Exception:
        logger.exception("Subcommand %s crashed", subcommand)
        return 2
    return 0


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
