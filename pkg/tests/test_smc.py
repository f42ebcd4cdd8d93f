import math
import statistics

import pytest
from pydantic import TypeAdapter, ValidationError

from bltl import parse_bltl
from bltl_vm import compile
from descriptor import load_model
from errors import DomainError, MaxSamplesExceeded, SampleFailed, UnknownTechnique
from smc import (
    AnalysisTechnique, ChernoffEstimation, Decision, MonteCarlo, SmcResult, Sprt, TechniqueKind, check_trace,
    chernoff_samples, estimate, exact_bounded_reachability, hoeffding_half_width, registry, run_analysis,
    run_trace_and_check, sprt,
)
from tests.conftest import coin_text

DTMC_WEIGHTS = [[1, 3, 0], [2, 0, 1], [0, 0, 1]]


def program_for(text):
    return compile(parse_bltl(text))


class TestSampleSizes:
    def test_chernoff_constants(self):
        assert chernoff_samples(0.05, 0.01) == 1060
        assert chernoff_samples(0.01, 0.05) == 18445

    @pytest.mark.parametrize("epsilon, delta", [(0, 0.05), (0.05, 1), (-0.1, 0.05), (0.05, 0)])
    def test_chernoff_domain(self, epsilon, delta):
        with pytest.raises(DomainError):
            chernoff_samples(epsilon, delta)

    def test_half_width_matches_sample_size(self):
        n = chernoff_samples(0.05, 0.01)
        assert hoeffding_half_width(n, 0.01) <= 0.05
        assert hoeffding_half_width(n - 1, 0.01) > 0.05


class TestTechniques:
    def test_discriminated_union(self):
        adapter = TypeAdapter(AnalysisTechnique)
        technique = adapter.validate_python({"kind": "sprt", "theta": 0.5, "indifference": 0.1,
                                             "alpha": 0.05, "beta": 0.05})
        assert isinstance(technique, Sprt)
        assert technique.p0 == pytest.approx(0.6)
        assert technique.p1 == pytest.approx(0.4)
        assert isinstance(adapter.validate_python({"kind": "chernoff", "epsilon": 0.1, "delta": 0.1}),
                          ChernoffEstimation)

    def test_chernoff_bounds(self):
        with pytest.raises(ValidationError):
            ChernoffEstimation(epsilon=0, delta=0.05)

    def test_monte_carlo_needs_samples(self):
        with pytest.raises(ValidationError):
            MonteCarlo(n=0)

    def test_indifference_region_inside_unit_interval(self):
        with pytest.raises(ValidationError):
            Sprt(theta=0.95, indifference=0.1, alpha=0.05, beta=0.05)

    def test_result_counts(self):
        with pytest.raises(ValidationError):
            SmcResult(property_id="p", technique=TechniqueKind.MONTE_CARLO, samples_used=3, positives=4)

    def test_registry(self):
        kinds = [entry["kind"] for entry in registry.list_analyses()]
        assert kinds == ["montecarlo", "chernoff", "sprt"]
        with pytest.raises(UnknownTechnique):
            registry.get("bayesian")


class TestTraces:
    def test_monitor_stops_simulation(self, counter_model):
        assert check_trace(counter_model, program_for("F<=5 (c.x = 3)"), 1, 0) == (True, 4)

    def test_unreachable_target_reads_whole_window(self, counter_model):
        assert check_trace(counter_model, program_for("F<=5 (c.x = 9)"), 1, 0) == (False, 6)

    def test_boolean_outcome(self, counter_model):
        assert run_trace_and_check(counter_model, program_for("G<=2 (c.x < 3)"), 1, 0) is True

    def test_trace_index_selects_randomness(self, coin_model):
        program = program_for("X coin.heads")
        outcomes = {check_trace(coin_model, program, 3, i)[0] for i in range(40)}
        assert outcomes == {True, False}


class TestEstimation:
    def test_tautology(self, counter_model):
        result = estimate(counter_model, program_for("G<=3 true"), MonteCarlo(n=50), seed=1)
        assert result.estimate == 1.0
        assert result.positives == result.samples_used == 50
        assert result.states_simulated == 50 * 4
        assert result.decision == Decision.NOT_APPLICABLE

    def test_chernoff_sample_count(self, coin_model):
        result = estimate(coin_model, program_for("X coin.heads"), ChernoffEstimation(epsilon=0.05, delta=0.05), seed=3)
        assert result.samples_used == chernoff_samples(0.05, 0.05)
        assert result.confidence_half_width == 0.05
        assert abs(result.estimate - 0.5) <= 0.08
        assert result.parameters == {"epsilon": 0.05, "delta": 0.05}

    def test_same_seed_same_estimate(self, coin_model):
        program = program_for("X coin.heads")
        first = estimate(coin_model, program, MonteCarlo(n=300), seed=11)
        second = estimate(coin_model, program, MonteCarlo(n=300), seed=11)
        assert first.positives == second.positives
        assert first.states_simulated == second.states_simulated

    def test_estimate_rejects_sprt(self, coin_model):
        with pytest.raises(DomainError):
            estimate(coin_model, program_for("X coin.heads"),
                     Sprt(theta=0.5, indifference=0.1, alpha=0.05, beta=0.05), seed=3)

    def test_failing_trace_aborts(self):
        model = load_model("type A { attr x: int = 0; cmd c: when true rate x - 1 do x := 1; } "
                           "system { instance a: A; closed; }")
        with pytest.raises(SampleFailed) as e:
            estimate(model, program_for("X a.x = 1"), MonteCarlo(n=10), seed=1)
        assert e.value.trace_index == 0

    @pytest.mark.slow
    def test_monte_carlo_estimate_is_unbiased(self):
        model = load_model(coin_text(7, 3))
        program = program_for("X coin.heads")
        estimates = [estimate(model, program, MonteCarlo(n=200), seed=seed).estimate for seed in range(50)]
        assert statistics.mean(estimates) == pytest.approx(0.7, abs=0.02)

    @pytest.mark.slow
    def test_chernoff_guarantee_holds_across_seeds(self):
        model = load_model(coin_text(7, 3))
        program = program_for("X coin.heads")
        technique = ChernoffEstimation(epsilon=0.1, delta=0.05)
        results = [estimate(model, program, technique, seed=seed) for seed in range(100)]
        assert all(r.samples_used == chernoff_samples(0.1, 0.05) for r in results)
        violations = sum(abs(r.estimate - 0.7) > 0.1 for r in results)
        assert violations <= 5

    @pytest.mark.slow
    def test_exact_dtmc_within_chernoff_bound(self, dtmc_model):
        exact = exact_bounded_reachability(DTMC_WEIGHTS, 0, [2], 10)
        program = program_for("F<=10 (chain.s = 2)")
        technique = ChernoffEstimation(epsilon=0.02, delta=0.02)
        violations = sum(abs(estimate(dtmc_model, program, technique, seed=seed, workers=2, batch_size=512).estimate
                             - exact) > 0.02 for seed in range(20))
        assert violations <= 1


class TestExactOracle:
    def test_absorbing_target(self):
        assert exact_bounded_reachability([[0, 1], [0, 1]], 0, [1], 1) == pytest.approx(1.0)
        assert exact_bounded_reachability([[0, 1], [0, 1]], 0, [1], 0) == pytest.approx(0.0)

    def test_two_step_chain(self):
        # 0 -> 1 w.p. 3/4, 1 -> 2 w.p. 1/3
        p = exact_bounded_reachability(DTMC_WEIGHTS, 0, [2], 2)
        assert p == pytest.approx(0.75 / 3)

    def test_square_matrix_required(self):
        with pytest.raises(DomainError):
            exact_bounded_reachability([[1, 0]], 0, [0], 1)


class TestSprt:
    TECHNIQUE = Sprt(theta=0.5, indifference=0.1, alpha=0.05, beta=0.05)

    @pytest.mark.slow
    @pytest.mark.parametrize("heads, tails, expected", [
        (7, 3, Decision.ABOVE_THRESHOLD),
        (3, 7, Decision.BELOW_THRESHOLD),
    ])
    def test_error_rates(self, heads, tails, expected):
        model = load_model(coin_text(heads, tails))
        program = program_for("X coin.heads")
        correct = sum(sprt(model, program, self.TECHNIQUE, seed).decision == expected for seed in range(200))
        assert correct >= 190

    @pytest.mark.slow
    def test_median_samples_below_chernoff(self):
        model = load_model(coin_text(7, 3))
        program = program_for("X coin.heads")
        used = [sprt(model, program, self.TECHNIQUE, seed).samples_used for seed in range(51)]
        assert statistics.median(used) < chernoff_samples(0.05, 0.05)

    def test_result_fields(self):
        result = sprt(load_model(coin_text(9, 1)), program_for("X coin.heads"), self.TECHNIQUE, 4)
        assert result.decision == Decision.ABOVE_THRESHOLD
        assert result.estimate is None
        assert result.log_likelihood_ratio <= math.log(0.05 / 0.95)
        assert result.samples_used >= result.positives > 0

    def test_sample_cap(self):
        capped = self.TECHNIQUE.model_copy(update={"max_samples": 2})
        with pytest.raises(MaxSamplesExceeded) as e:
            sprt(load_model(coin_text(1, 1)), program_for("X coin.heads"), capped, 4)
        assert e.value.limit == 2


class TestWorkers:
    @pytest.mark.parametrize("workers", [2, 8])
    def test_results_independent_of_worker_count(self, coin_model, workers):
        program = program_for("X coin.heads")
        technique = MonteCarlo(n=200)
        serial = run_analysis(coin_model, program, technique, 5, "heads", workers=1)
        parallel = run_analysis(coin_model, program, technique, 5, "heads", workers=workers, batch_size=16)
        assert serial.model_dump(exclude={"elapsed"}) == parallel.model_dump(exclude={"elapsed"})

    def test_sprt_independent_of_worker_count(self, coin_model):
        program = program_for("X coin.heads")
        technique = Sprt(theta=0.3, indifference=0.05, alpha=0.01, beta=0.01)
        serial = sprt(coin_model, program, technique, 5, workers=1)
        parallel = sprt(coin_model, program, technique, 5, workers=4, batch_size=8)
        assert serial.model_dump(exclude={"elapsed"}) == parallel.model_dump(exclude={"elapsed"})

    def test_parallel_failure_carries_trace_index(self):
        model = load_model("type A { attr x: int = 0; cmd c: when true rate x - 1 do x := 1; } "
                           "system { instance a: A; closed; }")
        with pytest.raises(SampleFailed) as e:
            estimate(model, program_for("X a.x = 1"), MonteCarlo(n=10), seed=1, workers=2, batch_size=4)
        assert e.value.trace_index == 0
