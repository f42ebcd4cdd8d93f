import math

import pytest

from errors import (
    DivisionByZero, EvaluationError, PathNotFound, TypeMismatch, UnknownComponentType, UnknownPath, VanishedInstance,
)
from expressions import (
    AllInstances, Binary, CollectionOf, EMPTY_ENV, Env, Iterate, Literal, PathRef, Schema, Scope, Size, Unary,
    call_builtin, eval_expr, format_expr, free_paths, infer_type, parse_expr, rebase,
)
from model_core import INT64_MIN, ValueType


@pytest.fixture
def schema(fleet_system):
    return Schema.from_system(fleet_system, {"Fleet": {}})


class TestParsing:
    def test_precedence(self):
        assert parse_expr("1 + 2 * 3") == Binary("+", Literal(1), Binary("*", Literal(2), Literal(3)))

    def test_logical_precedence(self):
        e = parse_expr("not a.x > 1 or b.y = 2 and c.z < 3")
        assert e.op == "or"
        assert e.left == Unary("not", Binary(">", PathRef(("a", "x")), Literal(1)))
        assert e.right.op == "and"

    def test_literals(self):
        assert parse_expr("2.5") == Literal(2.5)
        assert parse_expr("true") == Literal(True)
        assert parse_expr('"north"') == Literal("north")

    def test_unicode_comparisons(self):
        assert parse_expr("a.x ≤ 3") == parse_expr("a.x <= 3")
        assert parse_expr("a.x ≠ 3") == parse_expr("a.x != 3")

    def test_collections(self):
        e = parse_expr("Ambulance.allInstances()->select(a | a.fuel > 0)->size()")
        assert isinstance(e, Size)
        assert isinstance(e.source, Iterate)
        assert e.source.kind == "select"
        assert e.source.source == AllInstances("Ambulance")

    def test_forall(self):
        e = parse_expr("Ambulance.allInstances()->forAll(a | a.fuel > 0)")
        assert e.kind == "forall"
        assert e.binder == "a"

    def test_reserved_binder(self):
        with pytest.raises(ValueError):
            parse_expr("Ambulance.allInstances()->forAll(time | time > 0)")

    def test_unknown_collection_op(self):
        with pytest.raises(ValueError):
            parse_expr("Ambulance.allInstances()->first()")

    def test_syntax_error_is_located(self):
        with pytest.raises(ValueError, match="^1:"):
            parse_expr("1 + * 2")

    def test_format_parses_back(self):
        for text in ("1 + 2 * 3", "not (a.x > -1)", "min(a.x, 2.5) / 2",
                     "Ambulance.allInstances()->exists(a | a.fuel = 0)"):
            e = parse_expr(text)
            assert parse_expr(format_expr(e)) == e


class TestTyping:
    def test_absolute_paths(self, schema):
        scope = Scope(schema)
        assert infer_type(parse_expr("fleet.amb1.fuel + 1"), scope) == ValueType.INT
        assert infer_type(parse_expr("fleet.amb1.speed * 2"), scope) == ValueType.REAL
        assert infer_type(parse_expr("fleet.amb1.fuel / 2"), scope) == ValueType.REAL

    def test_unknown_path(self, schema):
        with pytest.raises(UnknownPath):
            infer_type(parse_expr("fleet.amb9.fuel"), Scope(schema))

    def test_unknown_type(self, schema):
        with pytest.raises(UnknownComponentType):
            infer_type(parse_expr("Truck.allInstances()->size()"), Scope(schema))

    def test_mismatch(self, schema):
        with pytest.raises(TypeMismatch):
            infer_type(parse_expr("fleet.amb1.fuel and true"), Scope(schema))

    def test_self_scope(self, schema):
        scope = Scope(schema, self_type="Ambulance")
        assert infer_type(parse_expr("fuel > 0"), scope) == ValueType.BOOL
        assert infer_type(parse_expr("self.speed"), scope) == ValueType.REAL
        assert infer_type(parse_expr("root.fleet.amb2.fuel"), scope) == ValueType.INT

    def test_collection_types(self, schema):
        scope = Scope(schema)
        assert infer_type(parse_expr("Ambulance.allInstances()"), scope) == CollectionOf("Ambulance")
        assert infer_type(parse_expr("Ambulance.allInstances()->size() < 5"), scope) == ValueType.BOOL

    def test_u_outside_custom_distribution(self, schema):
        with pytest.raises(TypeMismatch):
            infer_type(parse_expr("u < 0.5"), Scope(schema))


class TestEvaluation:
    def test_arithmetic(self, fleet_state):
        assert eval_expr(parse_expr("fleet.amb1.fuel * 2 - 1"), fleet_state) == 19
        assert eval_expr(parse_expr("7 / 2"), fleet_state) == 3.5
        assert eval_expr(parse_expr("floor(7 / 2)"), fleet_state) == 3
        assert eval_expr(parse_expr("mod(7, 3)"), fleet_state) == 1
        assert eval_expr(parse_expr("max(1, fleet.amb1.speed)"), fleet_state) == 1.5

    def test_abs_and_floor_stay_in_range(self):
        assert call_builtin("abs", [-5]) == 5
        assert call_builtin("abs", [-2.5]) == 2.5
        with pytest.raises(EvaluationError):
            call_builtin("abs", [INT64_MIN])
        with pytest.raises(EvaluationError):
            call_builtin("floor", [math.inf])
        with pytest.raises(EvaluationError):
            call_builtin("floor", [1e300])

    def test_string_concatenation(self, fleet_state):
        assert eval_expr(parse_expr('"a" + "b"'), fleet_state) == "ab"

    def test_division_by_zero(self, fleet_state):
        with pytest.raises(DivisionByZero):
            eval_expr(parse_expr("fleet.amb1.fuel / fleet.amb2.fuel"), fleet_state)
        with pytest.raises(DivisionByZero):
            eval_expr(parse_expr("mod(3, 0)"), fleet_state)

    def test_missing_path(self, fleet_state):
        with pytest.raises(PathNotFound):
            eval_expr(parse_expr("fleet.amb3.fuel"), fleet_state)

    def test_time(self, fleet_state):
        assert eval_expr(parse_expr("time + 1"), fleet_state) == 1

    def test_quantifiers(self, fleet_state):
        assert eval_expr(parse_expr("Ambulance.allInstances()->exists(a | a.fuel = 0)"), fleet_state) is True
        assert eval_expr(parse_expr("Ambulance.allInstances()->forAll(a | a.fuel > 0)"), fleet_state) is False
        assert eval_expr(parse_expr("Ambulance.allInstances()->select(a | a.fuel > 0)->size()"), fleet_state) == 1

    def test_collection_is_not_a_value(self, fleet_state):
        with pytest.raises(TypeMismatch):
            eval_expr(parse_expr("Ambulance.allInstances()"), fleet_state)

    def test_vanished_binder(self, fleet_state):
        env = EMPTY_ENV.bind("a", ("fleet", "amb7"))
        with pytest.raises(VanishedInstance):
            eval_expr(parse_expr("a.fuel > 0"), fleet_state, env)

    def test_short_circuit(self, fleet_state):
        assert eval_expr(parse_expr("false and fleet.amb1.fuel / 0 > 1"), fleet_state) is False

    def test_u_binding(self, fleet_state):
        assert eval_expr(parse_expr("u * 2"), fleet_state, Env(u=0.25)) == 0.5


class TestRewriting:
    def test_rebase(self):
        e = rebase(parse_expr("fuel + self.speed + root.base.stock"), ("fleet", "amb1"))
        assert set(free_paths(e)) == {("fleet", "amb1", "fuel"), ("fleet", "amb1", "speed"), ("base", "stock")}

    def test_rebase_keeps_binders(self):
        e = rebase(parse_expr("Ambulance.allInstances()->forAll(a | a.fuel > fuel)"), ("fleet", "amb1"))
        assert e.body.left == PathRef(("a", "fuel"))
        assert e.body.right == PathRef(("fleet", "amb1", "fuel"))
