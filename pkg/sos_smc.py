"""
Command-line entry point of the statistical model checker.

    python sos_smc.py check models/demo.smcs --seed 42 --format json
    python sos_smc.py validate models/ambulance.sosd
    python sos_smc.py simulate models/counter.sosd --steps 10 --dump
    python sos_smc.py translate "[x > 0] holds during [5]" --horizon 20

Exit codes: 0 when every analysis completed, 1 for diagnostics (model,
contract, property or session errors), 2 for internal errors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from bltl import format_formula
from bltl_vm import compile as compile_property
from config_loader import load_settings, setup_logging
from descriptor import build_model, parse_descriptor
from errors import Diagnostic, SessionError, SmcError
from gcsl import parse_gcsl, translate_to_bltl
from session import (
    OutputFormat, TOOL_VERSION, load_session_model, parse_session, property_program, render_results, run_session,
)
from sim_kernel import dump_state

logger = logging.getLogger("sos_smc")

EXIT_OK = 0
EXIT_DIAGNOSTICS = 1
EXIT_INTERNAL = 2


class Colors:
    RED = '\033[91m'
    YELLOW = '\033[93m'
    ENDC = '\033[0m'


def _colored(text: str, color: str) -> str:
    if sys.stderr.isatty():
        return f"{color}{text}{Colors.ENDC}"
    return text


def print_diagnostics(source: str, diagnostics: Sequence[Diagnostic]) -> None:
    """Print diagnostics to stderr as `source:line:column: severity: message`."""
    for d in diagnostics:
        color = Colors.RED if d.is_error else Colors.YELLOW
        print(_colored(f"{source}:{d}", color), file=sys.stderr)


def print_error(text: str) -> None:
    print(_colored(f"error: {text}", Colors.RED), file=sys.stderr)


def emit(text: str, out: Optional[str], directory: str) -> None:
    """Write output to stdout or to a file; relative paths land under `directory`."""
    if out:
        path = Path(directory) / out
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info(f"Wrote {path}")
    else:
        sys.stdout.write(text)


def cmd_check(args, settings) -> int:
    config = parse_session(args.session, settings)
    print_diagnostics(args.session, config.diagnostics)
    results = run_session(config, settings, seed=args.seed, workers=args.workers)
    output_format = args.format or config.format
    if args.disasm:
        model, _ = load_session_model(config.model_path, results.metadata.seed)
        for spec in config.properties:
            try:
                print(property_program(spec, model, config.horizon).disassemble(), file=sys.stderr)
            except SessionError as e:
                print_diagnostics(e.stage, e.diagnostics)
                print_error(str(e))
    text = render_results(results, output_format, settings.output.include_timing)
    emit(text, args.out, settings.general.output_directory)
    return EXIT_OK if results.completed else EXIT_DIAGNOSTICS


def cmd_validate(args, settings) -> int:
    text = Path(args.model).read_text(encoding="utf-8")
    definition = parse_descriptor(text)
    print_diagnostics(args.model, definition.diagnostics)
    if definition.has_errors:
        return EXIT_DIAGNOSTICS
    model = build_model(definition, settings.smc.default_seed)
    print(f"{args.model}: ok ({len(definition.types)} types, {len(definition.instances)} instances, "
          f"{len(model.commands)} commands, {'open' if definition.open_flag else 'closed'} system)")
    return EXIT_OK


def cmd_simulate(args, settings) -> int:
    limit = settings.simulation.max_dump_steps
    if args.steps < 0 or args.steps > limit:
        print_error(f"--steps must lie in [0, {limit}]")
        return EXIT_DIAGNOSTICS
    text = Path(args.model).read_text(encoding="utf-8")
    definition = parse_descriptor(text)
    print_diagnostics(args.model, definition.diagnostics)
    if definition.has_errors:
        return EXIT_DIAGNOSTICS
    seed = args.seed if args.seed is not None else settings.smc.default_seed
    model = build_model(definition, seed)
    trace = model.new_trace(args.trace_index, seed=seed, retain=1)
    lines: List[str] = [dump_state(trace.last)] if args.dump else []
    for _ in range(args.steps):
        state = trace.advance()
        if args.dump:
            lines.append(dump_state(state))
    if not args.dump:
        lines.append(dump_state(trace.last))
    emit("\n".join(lines) + "\n", args.out, settings.general.output_directory)
    return EXIT_OK


def cmd_translate(args, settings) -> int:
    schema = None
    if args.model:
        model = build_model(parse_descriptor(Path(args.model).read_text(encoding="utf-8")),
                            settings.smc.default_seed)
        schema = model.schema()
    ast = parse_gcsl(args.contract, schema)
    print_diagnostics("contract", ast.diagnostics)
    formula = translate_to_bltl(ast, args.horizon)
    text = format_formula(formula, unicode=args.unicode) + "\n"
    if args.disasm:
        text += compile_property(formula, schema).disassemble() + "\n"
    emit(text, args.out, settings.general.output_directory)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sos_smc", description="Statistical model checker for stochastic systems of systems")
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    parser.add_argument("--settings", help="Settings file (default: config/settings.json)")
    parser.add_argument("--log-level", help="Override the configured log level")
    subparsers = parser.add_subparsers(dest="command", required=True)

    check = subparsers.add_parser("check", help="Run an SMC session")
    check.add_argument("session", help="Session file (.smcs)")
    check.add_argument("--seed", type=int, help="Global seed; overrides the session")
    check.add_argument("--workers", type=int, help="Sample workers (0 = one per physical core)")
    check.add_argument("--format", choices=[f.value for f in OutputFormat], help="Result format")
    check.add_argument("--out", help="Results file instead of stdout; relative paths go under general.output_directory")
    check.add_argument("--disasm", action="store_true", help="Print property programs to stderr")
    check.set_defaults(handler=cmd_check)

    validate = subparsers.add_parser("validate", help="Check a model descriptor")
    validate.add_argument("model", help="Descriptor file (.sosd)")
    validate.set_defaults(handler=cmd_validate)

    simulate = subparsers.add_parser("simulate", help="Simulate one trace")
    simulate.add_argument("model", help="Descriptor file (.sosd)")
    simulate.add_argument("--steps", type=int, default=10, help="Number of steps")
    simulate.add_argument("--dump", action="store_true", help="Print every state, not only the last")
    simulate.add_argument("--seed", type=int, help="Global seed")
    simulate.add_argument("--trace-index", type=int, default=0, help="Trace index")
    simulate.add_argument("--out", help="Dump file instead of stdout; relative paths go under general.output_directory")
    simulate.set_defaults(handler=cmd_simulate)

    translate = subparsers.add_parser("translate", help="Translate a contract to bounded LTL")
    translate.add_argument("contract", help="Contract text")
    translate.add_argument("--horizon", type=int, required=True, help="Analysis horizon in steps")
    translate.add_argument("--model", help="Descriptor used to type-check the contract")
    translate.add_argument("--unicode", action="store_true", help="Print with Unicode operators")
    translate.add_argument("--disasm", action="store_true", help="Also print the property program")
    translate.add_argument("--out", help="Output file instead of stdout; relative paths go under general.output_directory")
    translate.set_defaults(handler=cmd_translate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.settings)
    except ValueError as e:
        print_error(str(e))
        return EXIT_DIAGNOSTICS
    setup_logging(settings, args.log_level)

    try:
        return args.handler(args, settings)
    except SmcError as e:
        print_diagnostics(getattr(e, "stage", args.command), getattr(e, "diagnostics", ()))
        print_error(str(e))
        return EXIT_DIAGNOSTICS
    except OSError as e:
        print_error(str(e))
        return EXIT_DIAGNOSTICS
    except Exception as e:
        logger.exception(f"Internal error: {e}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
