"""
Random variables with expression parameters and reproducible streams.

Parameters are expressions re-evaluated at every observation, so a
distribution can depend on the current state and on `time`.
Streams are numpy Generators over the counter-based Philox bit generator,
keyed by (global seed, trace index, variable id).
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Dict, Union

import numpy as np

from errors import InvalidParameters, TypeMismatch
from expressions import Env, Expr, eval_expr, format_expr, rebase
from model_core import AttributeValue, Path, SimulationState, ValueType

logger = logging.getLogger(__name__)

SELECTION_STREAM = "$select"


@dataclass(frozen=True)
class UniformReal:
    min: Expr
    max: Expr


@dataclass(frozen=True)
class UniformInt:
    min: Expr
    max: Expr


@dataclass(frozen=True)
class NormalReal:
    mean: Expr
    stddev: Expr


@dataclass(frozen=True)
class NormalInt:
    mean: Expr
    stddev: Expr


@dataclass(frozen=True)
class CustomReal:
    """Inverse-transform style: `observe` may read a fresh uniform sample `u`."""
    observe: Expr


@dataclass(frozen=True)
class CustomInt:
    observe: Expr


DistributionSpec = Union[UniformReal, UniformInt, NormalReal, NormalInt, CustomReal, CustomInt]

# descriptor keyword -> (class, parameter names)
DISTRIBUTIONS = {
    "uniform_real": (UniformReal, ("min", "max")),
    "uniform_int": (UniformInt, ("min", "max")),
    "normal_real": (NormalReal, ("mean", "stddev")),
    "normal_int": (NormalInt, ("mean", "stddev")),
    "custom_real": (CustomReal, ("observe",)),
    "custom_int": (CustomInt, ("observe",)),
}
DISTRIBUTION_NAMES = {cls: name for name, (cls, _) in DISTRIBUTIONS.items()}


def result_type(spec: DistributionSpec) -> ValueType:
    if isinstance(spec, (UniformInt, NormalInt, CustomInt)):
        return ValueType.INT
    return ValueType.REAL


def parameters(spec: DistributionSpec) -> Dict[str, Expr]:
    _, names = DISTRIBUTIONS[DISTRIBUTION_NAMES[type(spec)]]
    return {name: getattr(spec, name) for name in names}


def format_distribution(spec: DistributionSpec) -> str:
    args = ", ".join(format_expr(e) for e in parameters(spec).values())
    return f"{DISTRIBUTION_NAMES[type(spec)]}({args})"


def rebase_distribution(spec: DistributionSpec, base: Path) -> DistributionSpec:
    return type(spec)(**{name: rebase(e, base) for name, e in parameters(spec).items()})


@dataclass(frozen=True)
class RandomVariable:
    id: str
    spec: DistributionSpec


class RngStream:
    """One deterministic sample stream; owned by a single trace."""

    def __init__(self, seed_sequence: np.random.SeedSequence):
        self.seed_sequence = seed_sequence
        self.generator = np.random.Generator(np.random.Philox(seed_sequence))
        self.draws = 0

    def uniform(self) -> float:
        """One sample from [0, 1)."""
        self.draws += 1
        return float(self.generator.random())

    def uniform_real(self, low: float, high: float) -> float:
        self.draws += 1
        if low == high:
            return float(low)
        return float(self.generator.uniform(low, high))

    def uniform_int(self, low: int, high: int) -> int:
        self.draws += 1
        return int(self.generator.integers(low, high, endpoint=True))

    def normal(self, mean: float, stddev: float) -> float:
        self.draws += 1
        if stddev == 0:
            return float(mean)
        return float(self.generator.normal(mean, stddev))


def variable_key(var_id: str) -> int:
    """64-bit BLAKE2b digest of a variable id, used as a spawn-key word."""
    digest = hashlib.blake2b(var_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_stream(global_seed: int, trace_index: int, var_id: str) -> RngStream:
    """
    Stream for one random variable of one trace.

    Distinct (trace_index, var_id) pairs get distinct spawn keys of the same
    root seed, which SeedSequence turns into independent Philox keys.
    """
    if global_seed < 0 or trace_index < 0:
        raise ValueError("seed and trace index must be non-negative")
    seq = np.random.SeedSequence(entropy=global_seed, spawn_key=(trace_index, variable_key(var_id)))
    return RngStream(seq)


class StreamBank:
    """Lazily created streams of one trace, by variable id."""

    def __init__(self, global_seed: int, trace_index: int):
        self.global_seed = global_seed
        self.trace_index = trace_index
        self._streams: Dict[str, RngStream] = {}

    def stream(self, var_id: str) -> RngStream:
        stream = self._streams.get(var_id)
        if stream is None:
            stream = derive_stream(self.global_seed, self.trace_index, var_id)
            self._streams[var_id] = stream
        return stream

    @property
    def selection(self) -> RngStream:
        return self.stream(SELECTION_STREAM)


def _number(var: RandomVariable, name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeMismatch(f"random variable '{var.id}': parameter '{name}' must be numeric, got {value!r}")
    if not math.isfinite(value):
        raise InvalidParameters(var.id, f"parameter '{name}' is not finite")
    return value


def _round_int(var: RandomVariable, value) -> int:
    value = _number(var, "observe", value)
    return int(round(value))


def observe(var: RandomVariable, state: SimulationState, stream: RngStream) -> AttributeValue:
    """
    Draw one sample of a random variable in the given state.

    Raises:
        InvalidParameters: min > max or stddev < 0
        EvaluationError, ModelError: parameter expressions failed
    """
    spec = var.spec
    if isinstance(spec, (UniformReal, UniformInt)):
        low = _number(var, "min", eval_expr(spec.min, state))
        high = _number(var, "max", eval_expr(spec.max, state))
        if low > high:
            raise InvalidParameters(var.id, f"min {low} > max {high}")
        if isinstance(spec, UniformInt):
            low_i, high_i = math.ceil(low), math.floor(high)
            if low_i > high_i:
                raise InvalidParameters(var.id, f"no integer in [{low}, {high}]")
            return stream.uniform_int(low_i, high_i)
        return stream.uniform_real(float(low), float(high))

    if isinstance(spec, (NormalReal, NormalInt)):
        mean = _number(var, "mean", eval_expr(spec.mean, state))
        stddev = _number(var, "stddev", eval_expr(spec.stddev, state))
        if stddev < 0:
            raise InvalidParameters(var.id, f"stddev {stddev} < 0")
        value = stream.normal(float(mean), float(stddev))
        return int(round(value)) if isinstance(spec, NormalInt) else value

    if isinstance(spec, (CustomReal, CustomInt)):
        value = eval_expr(spec.observe, state, Env(u=stream.uniform()))
        if isinstance(spec, CustomInt):
            return _round_int(var, value)
        return float(_number(var, "observe", value))

    raise TypeError(f"unsupported distribution {spec!r}")
