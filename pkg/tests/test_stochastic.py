import numpy as np
import pytest

from errors import InvalidParameters
from expressions import Literal, parse_expr
from stochastic import (
    CustomInt, CustomReal, NormalInt, NormalReal, RandomVariable, StreamBank, UniformInt, UniformReal,
    derive_stream, format_distribution, observe, variable_key,
)


def var(spec, name="fleet.amb1.trip"):
    return RandomVariable(name, spec)


class TestStreams:
    def test_same_key_same_sequence(self):
        a = derive_stream(42, 3, "fleet.amb1.trip")
        b = derive_stream(42, 3, "fleet.amb1.trip")
        assert [a.uniform() for _ in range(5)] == [b.uniform() for _ in range(5)]

    def test_keys_are_independent(self):
        base = [derive_stream(42, 3, "x").uniform() for _ in range(3)]
        assert base != [derive_stream(42, 4, "x").uniform() for _ in range(3)]
        assert base != [derive_stream(43, 3, "x").uniform() for _ in range(3)]
        assert base != [derive_stream(42, 3, "y").uniform() for _ in range(3)]

    def test_variable_key_is_stable(self):
        assert variable_key("fleet.amb1.trip") == variable_key("fleet.amb1.trip")
        assert 0 <= variable_key("x") < 2 ** 64

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            derive_stream(-1, 0, "x")

    def test_bank_reuses_streams(self):
        bank = StreamBank(7, 0)
        assert bank.stream("a") is bank.stream("a")
        assert bank.selection is bank.stream("$select")

    def test_draw_counter(self):
        stream = derive_stream(1, 0, "x")
        stream.uniform()
        stream.uniform_int(1, 6)
        assert stream.draws == 2


class TestObserve:
    def test_uniform_int_inclusive(self, fleet_state):
        stream = derive_stream(5, 0, "die")
        samples = {observe(var(UniformInt(Literal(1), Literal(3))), fleet_state, stream) for _ in range(500)}
        assert samples == {1, 2, 3}

    def test_state_dependent_parameters(self, fleet_state):
        spec = UniformInt(parse_expr("fleet.amb1.fuel - 3"), parse_expr("fleet.amb1.fuel - 1"))
        stream = derive_stream(5, 0, "trip")
        for _ in range(100):
            assert 7 <= observe(var(spec), fleet_state, stream) <= 9

    def test_uniform_real_range(self, fleet_state):
        stream = derive_stream(5, 0, "r")
        for _ in range(100):
            assert 2.0 <= observe(var(UniformReal(Literal(2), Literal(2.5))), fleet_state, stream) <= 2.5

    def test_degenerate_interval(self, fleet_state):
        stream = derive_stream(5, 0, "r")
        assert observe(var(UniformReal(Literal(2), Literal(2))), fleet_state, stream) == 2.0

    def test_min_above_max(self, fleet_state):
        with pytest.raises(InvalidParameters) as e:
            observe(var(UniformInt(Literal(5), Literal(1))), fleet_state, derive_stream(5, 0, "x"))
        assert e.value.variable == "fleet.amb1.trip"

    def test_no_integer_in_interval(self, fleet_state):
        with pytest.raises(InvalidParameters):
            observe(var(UniformInt(Literal(1.2), Literal(1.8))), fleet_state, derive_stream(5, 0, "x"))

    def test_negative_stddev(self, fleet_state):
        with pytest.raises(InvalidParameters):
            observe(var(NormalReal(Literal(0), Literal(-1))), fleet_state, derive_stream(5, 0, "x"))

    def test_normal_moments(self, fleet_state):
        stream = derive_stream(11, 0, "n")
        samples = np.array([observe(var(NormalReal(Literal(10), Literal(2))), fleet_state, stream)
                            for _ in range(4000)])
        assert abs(samples.mean() - 10) < 0.15
        assert abs(samples.std() - 2) < 0.15

    def test_normal_int_rounds(self, fleet_state):
        stream = derive_stream(11, 0, "n")
        value = observe(var(NormalInt(Literal(10), Literal(2))), fleet_state, stream)
        assert isinstance(value, int)

    def test_custom_inverse_transform(self, fleet_state):
        # 1 when u >= 0.7
        spec = CustomInt(parse_expr("floor(u + 0.3)"))
        stream = derive_stream(13, 0, "c")
        ones = sum(observe(var(spec), fleet_state, stream) for _ in range(5000))
        assert abs(ones / 5000 - 0.3) < 0.03

    def test_custom_real(self, fleet_state):
        stream = derive_stream(13, 0, "c")
        value = observe(var(CustomReal(parse_expr("u * fleet.amb1.fuel"))), fleet_state, stream)
        assert 0.0 <= value < 10.0

    def test_format(self):
        assert format_distribution(UniformInt(parse_expr("fuel - 3"), Literal(2))) == "uniform_int((fuel - 3), 2)"
