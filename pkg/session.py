"""
SMC sessions: the `.smcs` configuration format, the analysis pipeline and
result rendering.

    # ambulance availability
    model = ambulance.sosd
    horizon = 100
    technique = chernoff
    epsilon = 0.05
    delta = 0.05
    seed = 42
    contract available: Ambulance.allInstances()->forAll(a | [a.fuel > 0] holds during [100])
    property first_trip: F<=10 (fleet.amb1.fuel < 50)

Relative model paths are resolved against the session file's directory.
"""

import hashlib
import json
import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from lark import Lark, Transformer
from lark.exceptions import UnexpectedInput
from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from bltl import format_formula, parse_bltl
from bltl_vm import PropertyProgram, compile as compile_property
from config_loader import Settings
from descriptor import build_model, parse_descriptor
from enum_compat import StrEnum, lookup
from errors import (
    Diagnostic, MissingField, ModelBuildError, SessionError, Severity, SmcError, UnknownTechnique, has_errors,
)
from expressions import syntax_diagnostic
from gcsl import parse_gcsl, translate_to_bltl
from sim_kernel import ExecutableModel
from smc import AnalysisTechnique, SmcResult, TechniqueKind, run_analysis

logger = logging.getLogger(__name__)

TOOL_VERSION = "1.0.0"
RESULTS_SCHEMA_VERSION = 1

SESSION_GRAMMAR = r"""
start: (entry | _NL)*
?entry: NAME "=" REST                 -> setting
      | "contract" NAME ":" REST      -> contract
      | "property" NAME ":" REST      -> property

NAME: /[A-Za-z_][A-Za-z_0-9]*/
REST: /[^\n]+/
COMMENT: /#[^\n]*/
_NL: /(\r?\n)+/
%import common.WS_INLINE
%ignore WS_INLINE
%ignore COMMENT
"""

_parser = Lark(SESSION_GRAMMAR, parser="lalr", lexer="contextual", propagate_positions=True)

INT_KEYS = {"horizon", "n", "max_samples", "seed", "workers"}
FLOAT_KEYS = {"epsilon", "delta", "theta", "indifference", "alpha", "beta"}
TEXT_KEYS = {"model", "technique", "format"}
TECHNIQUE_KEYS = {
    TechniqueKind.MONTE_CARLO: ("n", "delta"),
    TechniqueKind.CHERNOFF: ("epsilon", "delta"),
    TechniqueKind.SPRT: ("theta", "indifference", "alpha", "beta", "max_samples"),
}

_technique_adapter = TypeAdapter(AnalysisTechnique)


class OutputFormat(StrEnum):
    TEXT = "text"
    JSON = "json"


class PropertySpec(BaseModel):
    """One named contract or raw B-LTL property of a session."""
    name: str
    kind: Literal["contract", "property"]
    text: str
    line: int = 0


class SessionConfig(BaseModel):
    model_path: str
    properties: List[PropertySpec] = Field(min_length=1)
    horizon: Optional[int] = Field(default=None, ge=0)
    technique: AnalysisTechnique
    seed: Optional[int] = None
    workers: Optional[int] = Field(default=None, ge=0)
    format: OutputFormat = OutputFormat.TEXT
    diagnostics: List[Diagnostic] = Field(default_factory=list)


class PropertyFailure(BaseModel):
    property_id: str
    stage: str
    message: str


class SessionMetadata(BaseModel):
    model_path: str
    model_sha256: str
    seed: int
    tool_version: str = TOOL_VERSION


class ResultsObject(BaseModel):
    """One SmcResult or one failure per configured property, in session order."""
    metadata: SessionMetadata
    results: List[SmcResult] = Field(default_factory=list)
    errors: List[PropertyFailure] = Field(default_factory=list)
    wall_time: float = 0.0

    @property
    def completed(self) -> bool:
        return not self.errors


# Parsing

class _Entry:
    def __init__(self, kind: str, name: str, value: str, line: int, column: int):
        self.kind = kind
        self.name = name
        self.value = value
        self.line = line
        self.column = column


class SessionBuilder(Transformer):
    def start(self, children):
        return list(children)

    def setting(self, children):
        key, value = children
        return _Entry("setting", str(key).lower(), str(value).strip(), key.line, key.column)

    def contract(self, children):
        name, text = children
        return _Entry("contract", str(name), str(text).strip(), name.line, name.column)

    def property(self, children):
        name, text = children
        return _Entry("property", str(name), str(text).strip(), name.line, name.column)


def _error(entry: _Entry, message: str, code: str) -> Diagnostic:
    return Diagnostic(Severity.ERROR, entry.line, entry.column, message, code)


def parse_session_text(text: str, base_dir: Optional[Path] = None, settings: Optional[Settings] = None) -> SessionConfig:
    """
    Parse session text into a validated configuration.

    Args:
        text: Session source
        base_dir: Directory relative model paths are resolved against
        settings: Supplies the default SPRT sample cap

    Returns:
        SessionConfig; warnings are kept in its diagnostics

    Raises:
        SessionError: syntax errors or invalid values, with diagnostics
        MissingField: no model, no technique or no property
        UnknownTechnique: technique is not montecarlo, chernoff or sprt
    """
    settings = settings or Settings()
    try:
        entries = SessionBuilder().transform(_parser.parse(text if text.endswith("\n") else text + "\n"))
    except UnexpectedInput as e:
        diagnostic = syntax_diagnostic(e, text)
        raise SessionError("session", f"syntax error: {diagnostic}", [diagnostic]) from e

    diagnostics: List[Diagnostic] = []
    values: Dict[str, Any] = {}
    where: Dict[str, _Entry] = {}
    properties: List[PropertySpec] = []
    for entry in entries:
        if entry.kind != "setting":
            if any(p.name == entry.name for p in properties):
                diagnostics.append(_error(entry, f"duplicate property name '{entry.name}'", "duplicate"))
                continue
            properties.append(PropertySpec(name=entry.name, kind=entry.kind, text=entry.value, line=entry.line))
            continue
        key = entry.name
        if key in where:
            diagnostics.append(_error(entry, f"'{key}' is set twice", "duplicate"))
            continue
        where[key] = entry
        try:
            if key in INT_KEYS:
                values[key] = int(entry.value)
            elif key in FLOAT_KEYS:
                values[key] = float(entry.value)
            elif key in TEXT_KEYS:
                values[key] = entry.value
            else:
                diagnostics.append(_error(entry, f"unknown key '{key}'", "unknown-key"))
        except ValueError:
            diagnostics.append(_error(entry, f"'{key}' expects a number, got '{entry.value}'", "value"))

    if has_errors(diagnostics):
        raise SessionError("session", f"{len(diagnostics)} error(s); first: {diagnostics[0]}", diagnostics)
    if "model" not in values:
        raise MissingField("model")
    if not properties:
        raise MissingField("properties")
    if "technique" not in values:
        raise MissingField("technique")
    try:
        kind = lookup(TechniqueKind, values["technique"])
    except ValueError:
        raise UnknownTechnique(values["technique"])

    wanted = TECHNIQUE_KEYS[kind]
    params: Dict[str, Any] = {"kind": kind.value}
    for key in sorted(FLOAT_KEYS | {"n", "max_samples"}):
        if key not in values:
            continue
        if key in wanted:
            params[key] = values[key]
        else:
            diagnostics.append(Diagnostic(Severity.WARNING, where[key].line, where[key].column,
                                          f"'{key}' is not used by {kind}", "unused"))
    if kind == TechniqueKind.SPRT:
        params.setdefault("max_samples", settings.smc.sprt_max_samples)

    try:
        technique = _technique_adapter.validate_python(params)
    except ValidationError as e:
        errors = []
        for problem in e.errors():
            key = next((str(part) for part in problem["loc"] if str(part) in where), None)
            line, column = (where[key].line, where[key].column) if key else (where["technique"].line, 1)
            field_name = key or ", ".join(str(part) for part in problem["loc"][1:]) or kind.value
            errors.append(Diagnostic(Severity.ERROR, line, column, f"{field_name}: {problem['msg']}", "range"))
        raise SessionError("session", f"invalid {kind} parameters; first: {errors[0]}", errors) from e

    model_path = Path(values["model"])
    if base_dir is not None and not model_path.is_absolute():
        model_path = base_dir / model_path
    if "format" in values:
        try:
            output = lookup(OutputFormat, values["format"])
        except ValueError as e:
            raise SessionError("session", str(e), [_error(where["format"], str(e), "value")])
    else:
        output = OutputFormat(settings.output.format)

    try:
        config = SessionConfig(
            model_path=str(model_path),
            properties=properties,
            horizon=values.get("horizon"),
            technique=technique,
            seed=values.get("seed"),
            workers=values.get("workers"),
            format=output,
            diagnostics=diagnostics,
        )
    except ValidationError as e:
        problem = e.errors()[0]
        key = str(problem["loc"][0]) if problem["loc"] else "session"
        entry = where.get(key)
        diagnostic = Diagnostic(Severity.ERROR, entry.line if entry else 1, entry.column if entry else 1,
                                f"{key}: {problem['msg']}", "range")
        raise SessionError("session", str(diagnostic), [diagnostic]) from e

    contracts = [p for p in properties if p.kind == "contract"]
    if contracts and config.horizon is None:
        raise MissingField("horizon")
    return config


def parse_session(path: str, settings: Optional[Settings] = None) -> SessionConfig:
    """Read and parse a `.smcs` file."""
    session_path = Path(path)
    try:
        text = session_path.read_text(encoding="utf-8")
    except OSError as e:
        raise SessionError("session", f"cannot read {path}: {e}") from e
    config = parse_session_text(text, session_path.parent, settings)
    logger.info(f"Parsed session {path}: {len(config.properties)} properties, technique {config.technique.kind}")
    return config


# Pipeline

def load_session_model(path: str, seed: int) -> Tuple[ExecutableModel, str]:
    """
    Parse, validate and build the model of a session.

    Returns:
        (model, sha256 of the descriptor bytes)
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise SessionError("parse", f"cannot read model {path}: {e}") from e
    definition = parse_descriptor(data.decode("utf-8"))
    for d in definition.diagnostics:
        if not d.is_error:
            logger.warning(f"{path}:{d}")
    if definition.has_errors:
        errors = [d for d in definition.diagnostics if d.is_error]
        raise SessionError("parse", f"{path}: {len(errors)} error(s); first: {errors[0]}", errors)
    try:
        model = build_model(definition, seed)
    except ModelBuildError as e:
        raise SessionError("build", str(e), e.diagnostics) from e
    except SmcError as e:
        raise SessionError("build", str(e)) from e
    return model, hashlib.sha256(data).hexdigest()


def property_program(spec: PropertySpec, model: ExecutableModel, horizon: Optional[int]) -> PropertyProgram:
    """
    Translate (for contracts) and compile one property against the model schema.

    Raises:
        SessionError: labeled 'translate' or 'compile'
    """
    schema = model.schema()
    try:
        if spec.kind == "contract":
            ast = parse_gcsl(spec.text, schema)
            formula = translate_to_bltl(ast, horizon)
            logger.debug(f"{spec.name}: {format_formula(formula)}")
        else:
            formula = parse_bltl(spec.text)
    except SmcError as e:
        raise SessionError("translate", f"{spec.name}: {e}", getattr(e, "diagnostics", ())) from e
    try:
        return compile_property(formula, schema)
    except SmcError as e:
        raise SessionError("compile", f"{spec.name}: {e}") from e


def run_session(config: SessionConfig, settings: Optional[Settings] = None,
                seed: Optional[int] = None, workers: Optional[int] = None) -> ResultsObject:
    """
    Run every configured property through translation, compilation and analysis.

    Args:
        config: Parsed session
        settings: Runtime settings supplying defaults
        seed: Overrides the session seed
        workers: Overrides the session worker count

    Returns:
        ResultsObject; properties that failed are listed in its errors

    Raises:
        SessionError: the model could not be parsed or built
    """
    settings = settings or Settings()
    started = time.perf_counter()
    global_seed = seed if seed is not None else config.seed if config.seed is not None else settings.smc.default_seed
    worker_count = workers if workers is not None else config.workers if config.workers is not None else settings.smc.workers
    if worker_count == 0:
        worker_count = settings.resolved_workers()

    model, digest = load_session_model(config.model_path, global_seed)
    results = ResultsObject(metadata=SessionMetadata(model_path=Path(config.model_path).name,
                                                     model_sha256=digest, seed=global_seed))
    for spec in config.properties:
        try:
            program = property_program(spec, model, config.horizon)
        except SessionError as e:
            logger.error(f"Property {spec.name} failed: {e}")
            results.errors.append(PropertyFailure(property_id=spec.name, stage=e.stage, message=str(e)))
            continue
        try:
            result = run_analysis(model, program, config.technique, global_seed, spec.name,
                                  workers=worker_count, batch_size=settings.smc.batch_size)
        except SmcError as e:
            logger.error(f"Analysis of {spec.name} aborted: {e}")
            results.errors.append(PropertyFailure(property_id=spec.name, stage="analyze", message=str(e)))
            continue
        results.results.append(result)
    results.wall_time = time.perf_counter() - started
    logger.info(f"Session finished: {len(results.results)} results, {len(results.errors)} failures "
                f"in {results.wall_time:.2f}s")
    return results


# Rendering

def results_document(r: ResultsObject, include_timing: bool = True) -> Dict[str, Any]:
    """Machine-readable form; timing lives only under 'timing'."""
    document: Dict[str, Any] = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "metadata": r.metadata.model_dump(mode="json"),
        "results": [res.model_dump(mode="json", exclude={"elapsed"}) for res in r.results],
        "errors": [err.model_dump(mode="json") for err in r.errors],
    }
    if include_timing:
        document["timing"] = {
            "wall_time": r.wall_time,
            "properties": {res.property_id: res.elapsed for res in r.results},
        }
    return document


def _outcome(res: SmcResult) -> str:
    if res.estimate is not None:
        text = f"{res.estimate:.4f}"
        if res.confidence_half_width is not None:
            text += f" ± {res.confidence_half_width:.4f}"
        return text
    return str(res.decision)


def render_results(r: ResultsObject, format: str = OutputFormat.TEXT, include_timing: bool = True) -> str:
    """
    Render results as an aligned table or as JSON.

    Args:
        r: Session results
        format: 'text' or 'json'
        include_timing: Emit the timing section (json) or column (text)
    """
    if lookup(OutputFormat, str(format)) == OutputFormat.JSON:
        return json.dumps(results_document(r, include_timing), indent=2, ensure_ascii=False) + "\n"

    lines = [f"model {r.metadata.model_path} (sha256 {r.metadata.model_sha256[:12]}), seed {r.metadata.seed}"]
    if r.results:
        header = ["property", "technique", "estimate/decision", "samples"]
        rows = [[res.property_id, str(res.technique), _outcome(res), str(res.samples_used)] for res in r.results]
        if include_timing:
            header.append("time")
            for row, res in zip(rows, r.results):
                row.append(f"{res.elapsed:.2f}s")
        widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
        for row in [header] + rows:
            lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
    if r.errors:
        lines.append(f"{len(r.errors)} propert{'y' if len(r.errors) == 1 else 'ies'} failed:")
        for err in r.errors:
            lines.append(f"  {err.property_id} [{err.stage}]: {err.message}")
    return "\n".join(lines) + "\n"
