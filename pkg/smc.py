"""
Simulation management kernel: trace sampling and the statistical analyses.

Sample i always uses trace index i, so every analysis is reproducible for a
fixed seed and independent of the number of workers. With more than one
worker, batches of trace indices are checked in a process pool and their
outcomes are consumed in trace-index order.
"""

import logging
import math
import time
from abc import ABC, abstractmethod
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from typing import Annotated, Any, Dict, Iterator, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from bltl import Verdict
from bltl_vm import MonitorSession, PropertyProgram
from enum_compat import StrEnum
from errors import DomainError, MaxSamplesExceeded, SampleFailed, SmcError, UnknownTechnique
from sim_kernel import ExecutableModel

logger = logging.getLogger(__name__)


class TechniqueKind(StrEnum):
    MONTE_CARLO = "montecarlo"
    CHERNOFF = "chernoff"
    SPRT = "sprt"


class Decision(StrEnum):
    ABOVE_THRESHOLD = "satisfied-above-threshold"
    BELOW_THRESHOLD = "below-threshold"
    NOT_APPLICABLE = "n/a"


def _open_unit(value: float, name: str) -> float:
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value


class MonteCarlo(BaseModel):
    """Fixed number of samples; delta only sizes the reported confidence interval."""
    kind: Literal["montecarlo"] = "montecarlo"
    n: int = Field(ge=1, description="Number of samples")
    delta: float = Field(default=0.05, description="Confidence parameter of the reported half-width")

    @model_validator(mode="after")
    def check_delta(self):
        _open_unit(self.delta, "delta")
        return self


class ChernoffEstimation(BaseModel):
    """Sample count from the Chernoff-Hoeffding bound."""
    kind: Literal["chernoff"] = "chernoff"
    epsilon: float = Field(description="Additive error")
    delta: float = Field(description="Failure probability")

    @model_validator(mode="after")
    def check_bounds(self):
        _open_unit(self.epsilon, "epsilon")
        _open_unit(self.delta, "delta")
        return self


class Sprt(BaseModel):
    """Wald's sequential probability ratio test around a threshold."""
    kind: Literal["sprt"] = "sprt"
    theta: float
    indifference: float
    alpha: float
    beta: float
    max_samples: int = Field(default=1_000_000, ge=1, description="Safety cap on the number of samples")

    @model_validator(mode="after")
    def check_bounds(self):
        for name in ("theta", "indifference", "alpha", "beta"):
            _open_unit(getattr(self, name), name)
        if self.indifference >= min(self.theta, 1 - self.theta):
            raise ValueError(
                f"indifference must be below min(theta, 1 - theta) = {min(self.theta, 1 - self.theta)}")
        return self

    @property
    def p0(self) -> float:
        return self.theta + self.indifference

    @property
    def p1(self) -> float:
        return self.theta - self.indifference


AnalysisTechnique = Annotated[Union[MonteCarlo, ChernoffEstimation, Sprt], Field(discriminator="kind")]


class SmcResult(BaseModel):
    """Outcome of one analysis of one property."""
    property_id: str
    technique: TechniqueKind
    parameters: Dict[str, Any] = Field(default_factory=dict)
    estimate: Optional[float] = None
    decision: Decision = Decision.NOT_APPLICABLE
    samples_used: int = 0
    positives: int = 0
    seed: int = 0
    states_simulated: int = 0
    failed_samples: int = 0
    confidence_half_width: Optional[float] = None
    log_likelihood_ratio: Optional[float] = None
    elapsed: float = Field(default=0.0, description="Wall time in seconds")

    @model_validator(mode="after")
    def check_counts(self):
        if not 0 <= self.positives <= self.samples_used:
            raise ValueError(f"positives {self.positives} outside [0, {self.samples_used}]")
        return self


def chernoff_samples(epsilon: float, delta: float) -> int:
    """
    N = ceil(ln(2/delta) / (2 epsilon^2)), so that Pr(|p_hat - p| > epsilon) <= delta.

    Raises:
        DomainError: epsilon or delta outside (0, 1)
    """
    for name, value in (("epsilon", epsilon), ("delta", delta)):
        if not 0.0 < value < 1.0:
            raise DomainError(f"{name} must lie in (0, 1), got {value}")
    return math.ceil(math.log(2.0 / delta) / (2.0 * epsilon * epsilon))


def hoeffding_half_width(n: int, delta: float) -> float:
    """Two-sided half-width that holds with probability 1 - delta after n samples."""
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


# Single traces

def check_trace(model: ExecutableModel, program: PropertyProgram, global_seed: int, trace_index: int) -> Tuple[bool, int]:
    """
    Simulate one trace only as far as the monitor needs.

    Returns:
        (verdict, number of states simulated including the initial one)
    """
    trace = model.new_trace(trace_index, seed=global_seed, retain=1)
    session = MonitorSession(program)
    verdict = session.feed_state(trace.last)
    while not verdict.decided:
        verdict = session.feed_state(trace.advance())
    return verdict == Verdict.TRUE, session.steps_consumed


def run_trace_and_check(model: ExecutableModel, program: PropertyProgram, global_seed: int, trace_index: int) -> bool:
    return check_trace(model, program, global_seed, trace_index)[0]


class SampleOutcome(NamedTuple):
    trace_index: int
    satisfied: bool
    states: int
    error: Optional[str] = None


_worker_model: Optional[ExecutableModel] = None
_worker_program: Optional[PropertyProgram] = None


def _init_worker(model: ExecutableModel, program: PropertyProgram) -> None:
    global _worker_model, _worker_program
    _worker_model, _worker_program = model, program


def _check_batch(seed: int, start: int, end: int) -> List[SampleOutcome]:
    outcomes = []
    for index in range(start, end):
        try:
            satisfied, states = check_trace(_worker_model, _worker_program, seed, index)
        except SmcError as e:
            # errors cross the process boundary as text
            outcomes.append(SampleOutcome(index, False, 0, f"{type(e).__name__}: {e}"))
            break
        outcomes.append(SampleOutcome(index, satisfied, states))
    return outcomes


class SampleRunner:
    """Yields sample outcomes in trace-index order, in-process or from a process pool."""

    def __init__(self, model: ExecutableModel, program: PropertyProgram, seed: int,
                 workers: int = 1, batch_size: int = 64):
        self.model = model
        self.program = program
        self.seed = seed
        self.workers = max(1, workers)
        self.batch_size = max(1, batch_size)

    def outcomes(self, limit: Optional[int] = None) -> Iterator[SampleOutcome]:
        if self.workers == 1:
            yield from self._serial(limit)
        else:
            yield from self._parallel(limit)

    def _serial(self, limit: Optional[int]) -> Iterator[SampleOutcome]:
        index = 0
        while limit is None or index < limit:
            try:
                satisfied, states = check_trace(self.model, self.program, self.seed, index)
            except SmcError as e:
                raise SampleFailed(index, e) from e
            yield SampleOutcome(index, satisfied, states)
            index += 1

    def _parallel(self, limit: Optional[int]) -> Iterator[SampleOutcome]:
        pool = ProcessPoolExecutor(max_workers=self.workers, initializer=_init_worker,
                                   initargs=(self.model, self.program))
        pending = deque()
        next_start = 0

        def submit() -> None:
            nonlocal next_start
            if limit is not None and next_start >= limit:
                return
            end = next_start + self.batch_size
            if limit is not None:
                end = min(end, limit)
            pending.append(pool.submit(_check_batch, self.seed, next_start, end))
            next_start = end

        try:
            for _ in range(2 * self.workers):
                submit()
            while pending:
                batch = pending.popleft().result()
                submit()
                for outcome in batch:
                    if outcome.error is not None:
                        raise SampleFailed(outcome.trace_index, SmcError(outcome.error))
                    yield outcome
        finally:
            pool.shutdown(wait=True, cancel_futures=True)


# Analyses

class AnalysisJob(NamedTuple):
    model: ExecutableModel
    program: PropertyProgram
    property_id: str
    seed: int
    workers: int = 1
    batch_size: int = 64


class Analysis(ABC):
    """One statistical technique; registered by its kind."""

    kind: TechniqueKind
    description: str = ""

    @abstractmethod
    def run(self, job: AnalysisJob, technique: Any) -> SmcResult:
        """Run the technique and return its result."""

    def runner(self, job: AnalysisJob) -> SampleRunner:
        return SampleRunner(job.model, job.program, job.seed, job.workers, job.batch_size)


class FixedSampleAnalysis(Analysis):
    """Estimate from a fixed number of samples."""

    def sample_count(self, technique) -> int:
        raise NotImplementedError

    def half_width(self, technique, n: int) -> float:
        raise NotImplementedError

    def run(self, job: AnalysisJob, technique) -> SmcResult:
        n = self.sample_count(technique)
        logger.info(f"{job.property_id}: {self.kind} analysis with {n} samples (seed {job.seed})")
        started = time.perf_counter()
        positives = 0
        states = 0
        for outcome in self.runner(job).outcomes(limit=n):
            positives += outcome.satisfied
            states += outcome.states
        result = SmcResult(
            property_id=job.property_id,
            technique=self.kind,
            parameters=technique.model_dump(exclude={"kind"}),
            estimate=positives / n,
            samples_used=n,
            positives=positives,
            seed=job.seed,
            states_simulated=states,
            confidence_half_width=self.half_width(technique, n),
            elapsed=time.perf_counter() - started,
        )
        logger.info(f"{job.property_id}: estimate {result.estimate:.4f} from {n} samples")
        return result


class MonteCarloAnalysis(FixedSampleAnalysis):
    kind = TechniqueKind.MONTE_CARLO
    description = "Monte Carlo estimation with a given number of samples"

    def sample_count(self, technique: MonteCarlo) -> int:
        return technique.n

    def half_width(self, technique: MonteCarlo, n: int) -> float:
        return hoeffding_half_width(n, technique.delta)


class ChernoffAnalysis(FixedSampleAnalysis):
    kind = TechniqueKind.CHERNOFF
    description = "Error-bounded estimation with the Chernoff-Hoeffding bound"

    def sample_count(self, technique: ChernoffEstimation) -> int:
        return chernoff_samples(technique.epsilon, technique.delta)

    def half_width(self, technique: ChernoffEstimation, n: int) -> float:
        return technique.epsilon


class SprtAnalysis(Analysis):
    kind = TechniqueKind.SPRT
    description = "Wald's sequential probability ratio test"

    def run(self, job: AnalysisJob, technique: Sprt) -> SmcResult:
        p0, p1 = technique.p0, technique.p1
        if not (0.0 < p1 < p0 < 1.0):
            raise DomainError(f"need 0 < theta - indifference < theta + indifference < 1, got p1={p1}, p0={p0}")
        log_positive = math.log(p1 / p0)
        log_negative = math.log((1 - p1) / (1 - p0))
        accept_below = math.log((1 - technique.beta) / technique.alpha)
        accept_above = math.log(technique.beta / (1 - technique.alpha))

        logger.info(f"{job.property_id}: SPRT around theta={technique.theta} "
                    f"(p0={p0:.4f}, p1={p1:.4f}, seed {job.seed})")
        started = time.perf_counter()
        log_ratio = 0.0
        n = positives = states = 0
        decision = None
        for outcome in self.runner(job).outcomes(limit=technique.max_samples):
            n += 1
            states += outcome.states
            if outcome.satisfied:
                positives += 1
                log_ratio += log_positive
            else:
                log_ratio += log_negative
            if log_ratio >= accept_below:
                decision = Decision.BELOW_THRESHOLD
                break
            if log_ratio <= accept_above:
                decision = Decision.ABOVE_THRESHOLD
                break
        if decision is None:
            raise MaxSamplesExceeded(technique.max_samples)

        logger.info(f"{job.property_id}: SPRT decided {decision} after {n} samples")
        return SmcResult(
            property_id=job.property_id,
            technique=self.kind,
            parameters=technique.model_dump(exclude={"kind"}),
            decision=decision,
            samples_used=n,
            positives=positives,
            seed=job.seed,
            states_simulated=states,
            log_likelihood_ratio=log_ratio,
            elapsed=time.perf_counter() - started,
        )


class AnalysisRegistry:
    """Registry of analysis techniques by kind."""

    def __init__(self):
        self.analyses: Dict[TechniqueKind, Analysis] = {}

    def register(self, analysis: Analysis) -> None:
        if analysis.kind in self.analyses:
            logger.warning(f"Analysis {analysis.kind} already registered. Overwriting.")
        self.analyses[analysis.kind] = analysis
        logger.debug(f"Registered analysis: {analysis.kind}")

    def get(self, kind: str) -> Analysis:
        analysis = self.analyses.get(kind)
        if analysis is None:
            raise UnknownTechnique(str(kind))
        return analysis

    def list_analyses(self) -> List[Dict[str, str]]:
        return [{"kind": str(a.kind), "description": a.description} for a in self.analyses.values()]


registry = AnalysisRegistry()
for _analysis in (MonteCarloAnalysis(), ChernoffAnalysis(), SprtAnalysis()):
    registry.register(_analysis)


def run_analysis(model: ExecutableModel, program: PropertyProgram, technique, seed: int,
                 property_id: str = "property", workers: int = 1, batch_size: int = 64) -> SmcResult:
    job = AnalysisJob(model, program, property_id, seed, workers, batch_size)
    return registry.get(technique.kind).run(job, technique)


def estimate(model: ExecutableModel, program: PropertyProgram, technique: Union[MonteCarlo, ChernoffEstimation],
             seed: int, property_id: str = "property", workers: int = 1, batch_size: int = 64) -> SmcResult:
    """
    Estimate the satisfaction probability from independent samples.

    Raises:
        SampleFailed: a trace raised; the analysis is aborted
    """
    if technique.kind == TechniqueKind.SPRT:
        raise DomainError("estimate() takes a Monte Carlo or Chernoff technique")
    return run_analysis(model, program, technique, seed, property_id, workers, batch_size)


def sprt(model: ExecutableModel, program: PropertyProgram, technique: Sprt, seed: int,
         property_id: str = "property", workers: int = 1, batch_size: int = 64) -> SmcResult:
    """
    Decide whether the satisfaction probability is above or below theta.

    Raises:
        DomainError: invalid hypotheses
        MaxSamplesExceeded: no decision within technique.max_samples
        SampleFailed: a trace raised; the analysis is aborted
    """
    return run_analysis(model, program, technique, seed, property_id, workers, batch_size)


# Exact oracle for small chains

def exact_bounded_reachability(transitions: Sequence[Sequence[float]], initial: int,
                               targets: Sequence[int], horizon: int) -> float:
    """
    Probability that a DTMC started in `initial` visits a target within
    `horizon` steps. Rows of `transitions` are normalized weights.
    """
    matrix = np.asarray(transitions, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DomainError("transition matrix must be square")
    sums = matrix.sum(axis=1, keepdims=True)
    matrix = np.divide(matrix, sums, out=np.eye(len(matrix)), where=sums > 0)
    for t in targets:
        matrix[t] = 0.0
        matrix[t, t] = 1.0
    dist = np.zeros(len(matrix))
    dist[initial] = 1.0
    dist = dist @ np.linalg.matrix_power(matrix, horizon)
    return float(dist[list(targets)].sum())
