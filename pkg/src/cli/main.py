"""
Command line: run a configured experiment, replay a manifest, run the acceptance suite

    python -m src.cli.main run configs/reproduce_lq.json
    python -m src.cli.main replay runs/reproduce-lq-<digest>-0/manifest.json
    python -m src.cli.main accept --quick
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from rich import box
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from src import __version__
from src.cli.acceptance import CriterionResult, run_acceptance
from src.cli.runner import replay, run
from src.data.contracts import load_config
from src.data.store import RunManifest
from src.errors import LabError

logger = logging.getLogger("src.cli")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=verbose, show_path=verbose)],
        force=True,
    )


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4g}"


def manifest_table(manifest: RunManifest) -> Table:
    table = Table(title=f"{manifest.experiment} (seed {manifest.seed})", box=box.ROUNDED, header_style="dim")
    table.add_column("Check", style="white")
    table.add_column("Result", justify="center")
    table.add_column("Numbers", style="dim")
    for name, outcome in manifest.checks.items():
        numbers = ", ".join(f"{k}={_fmt(v)}" for k, v in outcome.numbers.items())
        table.add_row(name, "[green]pass[/green]" if outcome.passed else "[red]FAIL[/red]", numbers)
    return table


def criteria_table(results: List[CriterionResult]) -> Table:
    table = Table(title="Acceptance criteria", box=box.ROUNDED, header_style="dim")
    table.add_column("#", justify="right")
    table.add_column("Criterion", style="white")
    table.add_column("Result", justify="center")
    table.add_column("Runtime", justify="right")
    table.add_column("Numbers", style="dim")
    for r in results:
        numbers = r.detail or ", ".join(f"{k}={_fmt(v)}" for k, v in r.numbers.items())
        table.add_row(
            str(r.number),
            r.name,
            "[green]pass[/green]" if r.passed else "[red]FAIL[/red]",
            f"{r.runtime:.1f}s" + (f" / {r.budget:g}s" if r.budget is not None else ""),
            numbers,
        )
    return table


def cmd_run(args: argparse.Namespace, console: Console) -> int:
    config = load_config(args.config)
    run_dir, manifest = run(config)
    console.print(manifest_table(manifest))
    console.print(f"results in [bold]{run_dir}[/bold]")
    return EXIT_OK if manifest.passed else EXIT_FAILED


def cmd_replay(args: argparse.Namespace, console: Console) -> int:
    verdict = replay(args.manifest, args.config)
    if args.json:
        console.print_json(json.dumps(verdict.to_dict()))
    elif verdict.identical:
        console.print(f"[green]identical[/green]: {verdict.replay_dir} reproduces {verdict.original_dir}")
    else:
        console.print(f"[red]differs[/red]: {', '.join(verdict.differing)}")
    return EXIT_OK if verdict.identical else EXIT_FAILED


def cmd_accept(args: argparse.Namespace, console: Console) -> int:
    results = run_acceptance(quick=args.quick, only=args.only)
    console.print(criteria_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbsde-lab", description="FBSDEs with jumps in a random environment")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Execute one configured experiment")
    p_run.add_argument("config", help="Path to a JSON run configuration")
    p_run.set_defaults(handler=cmd_run)

    p_replay = sub.add_parser("replay", help="Re-run a manifest and compare result digests")
    p_replay.add_argument("manifest", help="manifest.json or its run directory")
    p_replay.add_argument("--config", default=None, help="Replace the stored config")
    p_replay.add_argument("--json", action="store_true", help="Print the verdict as JSON")
    p_replay.set_defaults(handler=cmd_replay)

    p_accept = sub.add_parser("accept", help="Run the acceptance suite")
    p_accept.add_argument("--quick", action="store_true", help="Reduced path counts")
    p_accept.add_argument("--only", type=int, nargs="+", default=None, help="Criterion numbers to run")
    p_accept.set_defaults(handler=cmd_accept)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    console = Console()
    try:
        return args.handler(args, console)
    except LabError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
