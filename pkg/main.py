import argparse
import sys
from pathlib import Path
from typing import List, Optional

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.status import Status
from rich.table import Table

from utils.command_parser import CommandResult, CommandType, ResultStyle, run_experiment, run_hodge, run_validate
from utils.stream_handler import StudyStreamHandler
from utils.utils import LAB_NAME, LAB_VERSION, get_output_dir, set_log_level, set_output_dir

STYLE_MAP = {
    ResultStyle.SUCCESS: ("bold green", "green"),
    ResultStyle.ERROR: ("bold red", "red"),
    ResultStyle.WARNING: ("bold yellow", "yellow"),
    ResultStyle.INFO: ("bold cyan", "cyan"),
}

EXPERIMENTS = {
    "solve": CommandType.SOLVE,
    "study": CommandType.STUDY,
    "crime": CommandType.CRIME,
    "coeffs": CommandType.COEFFS,
}


def _common_flags(parser: argparse.ArgumentParser, default=None):
    parser.add_argument("--output-dir", type=str, default=default, help="Directory for CSV / JSON artifacts")
    parser.add_argument("--seed", type=int, default=default, help="Override the configured random seed")
    parser.add_argument("--tol", type=float, default=default, help="Override the solver tolerance")
    parser.add_argument("--verbose", "-v", action="count", default=default, help="-v INFO, -vv DEBUG logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=LAB_NAME, description="FEEC laboratory: Hilbert complexes, "
                                                                "mixed and semilinear solvers, refinement studies")
    _common_flags(parser)
    # 子命令上的同名参数只在显式给出时覆盖
    common = argparse.ArgumentParser(add_help=False)
    _common_flags(common, default=argparse.SUPPRESS)

    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    p = sub.add_parser("validate", parents=[common], help="Check the invariants of a complex JSON file")
    p.add_argument("complex", type=str)
    p = sub.add_parser("hodge", parents=[common], help="Hodge-decompose a vector on a complex")
    p.add_argument("complex", type=str)
    p.add_argument("--degree", "-k", type=int, required=True)
    p.add_argument("--vector", type=str, required=True, help="JSON array or {\"vector\": [...]}")
    for name, help_text in (("solve", "Single manufactured solve on the first level"),
                            ("study", "Manufactured-solution refinement study"),
                            ("crime", "Variational-crime epsilon sweep"),
                            ("coeffs", "Approximation coefficients delta, eta, mu")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("config", type=str, help="Study configuration (.toml or .json)")
    return parser


def _print_result(result: CommandResult, console: Console, err_console: Console):
    title_style, border_style = STYLE_MAP.get(result.style, ("bold", "white"))
    target = console if result.success else err_console
    target.print(Panel(
        result.output,
        title=f"[{title_style}]{result.title}[/{title_style}]",
        border_style=border_style,
        box=box.ROUNDED if not result.success else box.SIMPLE,
    ))


def cli_main(argv: Optional[List[str]] = None) -> int:
    """
    命令行入口

    Returns:
        0 成功; 1 数值失败或断言不通过; 2 用法错误
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2

    console = Console()
    err_console = Console(stderr=True)

    if args.verbose:
        set_log_level("DEBUG" if args.verbose > 1 else "INFO")
    set_output_dir(args.output_dir)

    # 创建配置信息表格
    info = Table(show_header=False, box=box.SIMPLE)
    info.add_column("Key", style="cyan")
    info.add_column("Value", style="green")
    info.add_row("Lab", f"{LAB_NAME} {LAB_VERSION}")
    info.add_row("Command", args.command)
    info.add_row("Output", str(Path(get_output_dir()).resolve()))
    if args.seed is not None:
        info.add_row("Seed", str(args.seed))
    console.print(info)

    if args.command == "validate":
        with Status("[bold cyan]Validating complex...", console=console, spinner="dots"):
            result = run_validate(args.complex)
    elif args.command == "hodge":
        with Status("[bold cyan]Computing Hodge decomposition...", console=console, spinner="dots"):
            result = run_hodge(args.complex, args.degree, args.vector)
    else:
        handler = StudyStreamHandler(console)
        try:
            result = run_experiment(EXPERIMENTS[args.command], args.config, args.output_dir, args.seed, args.tol,
                                    on_event=handler)
        except KeyboardInterrupt:
            handler.finalize()
            err_console.print("\n[bold yellow]⚠️  Interrupted by user[/bold yellow]")
            return 1
        finally:
            handler.finalize()

    _print_result(result, console, err_console)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(cli_main())
