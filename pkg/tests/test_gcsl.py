import random

import pytest

from bltl import (
    And, Atom, Finally, Globally, Implies, Quantified, Verdict, format_formula, reference_eval, required_window,
)
from descriptor import load_model
from errors import ContractSyntaxError, ContractTypeError, HorizonTooSmall, Severity, UnboundBinder, UnknownPattern
from expressions import AllInstances, parse_expr
from gcsl import PatternKind, format_contract, parse_gcsl, translate_to_bltl
from tests.conftest import int_state

FLEET_AVAILABLE = "Ambulance.allInstances()->forAll(a | [a.fuel > 0] holds during [100])"


@pytest.fixture
def schema(ambulance_text):
    return load_model(ambulance_text).schema()


def atom(text):
    return Atom(parse_expr(text))


class TestParsing:
    def test_invariant_under_forall(self):
        ast = parse_gcsl(FLEET_AVAILABLE)
        assert len(ast.quantifiers) == 1
        q = ast.quantifiers[0]
        assert (q.kind, q.binder, q.source) == ("forall", "a", AllInstances("Ambulance"))
        assert ast.pattern.kind == PatternKind.INVARIANT
        assert ast.pattern.bound == 100
        assert ast.pattern.q is None

    def test_response_hold(self):
        ast = parse_gcsl("whenever [m.a = 1] occurs [m.b = 1] holds during following [3]")
        assert ast.quantifiers == ()
        assert ast.pattern.kind == PatternKind.RESPONSE_HOLD
        assert ast.pattern.p == parse_expr("m.a = 1")
        assert ast.pattern.q == parse_expr("m.b = 1")

    def test_keywords_are_case_insensitive(self):
        ast = parse_gcsl("WHENEVER [m.a = 1] Occurs [m.b = 1] OCCURS Within [5]")
        assert ast.pattern.kind == PatternKind.RESPONSE_WITHIN
        assert ast.pattern.bound == 5

    def test_nested_quantifiers(self):
        ast = parse_gcsl("Fleet.allInstances()->exists(f | Ambulance.allInstances()->forAll(a | "
                         "[a.fuel > 0] holds during [10]))")
        assert [(q.kind, q.binder) for q in ast.quantifiers] == [("exists", "f"), ("forall", "a")]

    def test_unknown_pattern(self):
        with pytest.raises(UnknownPattern) as e:
            parse_gcsl("[m.a = 1] happens during [3]")
        assert e.value.diagnostics[0].code == "unknown-pattern"

    def test_syntax_error(self):
        with pytest.raises(ContractSyntaxError):
            parse_gcsl("[m.a = ] holds during [3]")

    def test_fractional_bound(self):
        with pytest.raises(ContractSyntaxError):
            parse_gcsl("[m.a = 1] holds during [2.5]")

    def test_unsupported_collection_method(self):
        with pytest.raises(ContractSyntaxError):
            parse_gcsl("Ambulance.allInstances()->collect(a | [a.fuel > 0] holds during [3])")

    def test_quantify_over_a_component(self):
        with pytest.raises(ContractSyntaxError):
            parse_gcsl("fleet.amb1->forAll(a | [a.fuel > 0] holds during [3])")

    def test_duplicate_binder(self):
        with pytest.raises(ContractSyntaxError):
            parse_gcsl("Ambulance.allInstances()->forAll(a | Ambulance.allInstances()->exists(a | "
                       "[a.fuel > 0] holds during [1]))")

    def test_binder_out_of_scope(self):
        with pytest.raises(UnboundBinder):
            parse_gcsl("Ambulance.allInstances()->select(b | b.fuel > 0)->forAll(a | [b.fuel > 0] holds during [5])")

    def test_unused_binder_warns(self):
        ast = parse_gcsl("Ambulance.allInstances()->forAll(a | [fleet.amb1.fuel > 0] holds during [5])")
        assert [(d.severity, d.code) for d in ast.diagnostics] == [(Severity.WARNING, "unused-binder")]

    def test_format_parses_back(self):
        for text in (FLEET_AVAILABLE,
                     "whenever [m.a = 1] occurs [m.b = 1] holds during following [3]",
                     "Ambulance.allInstances()->select(x | x.trips > 2)->exists(a | "
                     "whenever [a.fuel < 5] occurs [a.fuel > 15] occurs within [8])"):
            ast = parse_gcsl(text)
            assert parse_gcsl(format_contract(ast)) == ast


class TestChecking:
    def test_well_typed(self, schema):
        parse_gcsl(FLEET_AVAILABLE, schema)

    def test_non_boolean_slot(self, schema):
        with pytest.raises(ContractTypeError):
            parse_gcsl("[fleet.amb1.fuel + 1] holds during [3]", schema)

    def test_unknown_name(self, schema):
        with pytest.raises(UnboundBinder):
            parse_gcsl("Ambulance.allInstances()->forAll(a | [b.fuel > 0] holds during [5])", schema)

    def test_absolute_paths(self, schema):
        parse_gcsl("whenever [fleet.amb1.fuel < 10] occurs [fleet.amb1.fuel = 20] occurs within [15]", schema)


class TestTranslation:
    def test_invariant(self):
        formula = translate_to_bltl(parse_gcsl(FLEET_AVAILABLE), 100)
        assert formula == Globally(100, Quantified("forall", "a", "Ambulance", atom("a.fuel > 0")))

    def test_response_hold(self):
        ast = parse_gcsl("whenever [m.a = 1] occurs [m.b = 1] holds during following [3]")
        formula = translate_to_bltl(ast, 10)
        assert formula == Globally(7, Implies(atom("m.a = 1"), Globally(3, atom("m.b = 1"))))
        assert required_window(formula) == 10

    def test_response_within(self):
        ast = parse_gcsl("whenever [m.a = 1] occurs [m.b = 1] occurs within [4]")
        assert translate_to_bltl(ast, 4) == Globally(0, Implies(atom("m.a = 1"), Finally(4, atom("m.b = 1"))))

    def test_quantifiers_inside_outer_globally(self):
        ast = parse_gcsl("Ambulance.allInstances()->forAll(a | whenever [a.fuel < 5] occurs [a.fuel > 15] "
                         "occurs within [8])")
        formula = translate_to_bltl(ast, 20)
        assert isinstance(formula, Globally)
        assert formula.bound == 12
        assert isinstance(formula.operand, Quantified)

    def test_select_becomes_guard(self):
        ast = parse_gcsl("Ambulance.allInstances()->select(x | x.trips > 2)->exists(a | [a.fuel > 0] holds during [5])")
        formula = translate_to_bltl(ast, 5)
        assert formula == Globally(5, Quantified("exists", "a", "Ambulance",
                                                 And(atom("a.trips > 2"), atom("a.fuel > 0"))))

    def test_select_under_forall_is_an_implication(self):
        ast = parse_gcsl("Ambulance.allInstances()->select(x | x.trips > 2)->forAll(a | [a.fuel > 0] holds during [5])")
        body = translate_to_bltl(ast, 5).operand.body
        assert body == Implies(atom("a.trips > 2"), atom("a.fuel > 0"))

    def test_horizon_too_small(self):
        ast = parse_gcsl("whenever [m.a = 1] occurs [m.b = 1] holds during following [10]")
        with pytest.raises(HorizonTooSmall) as e:
            translate_to_bltl(ast, 5)
        assert (e.value.horizon, e.value.bound) == (5, 10)

    def test_translation_is_printable(self):
        formula = translate_to_bltl(parse_gcsl(FLEET_AVAILABLE), 100)
        assert format_formula(formula) == "G<=100 (forall a in Ambulance: (a.fuel > 0))"


CONDITIONS = {
    "m.a > 1": lambda s: s["a"] > 1,
    "m.a = 0": lambda s: s["a"] == 0,
    "m.b < 2": lambda s: s["b"] < 2,
    "m.a = m.b": lambda s: s["a"] == s["b"],
    "true": lambda s: True,
}


def pattern_holds(kind, p, q, bound, values, horizon):
    """Direct reading of a pattern over a list of attribute dicts."""
    if kind == PatternKind.INVARIANT:
        return all(p(values[i]) for i in range(bound + 1))
    starts = range(horizon - bound + 1)
    if kind == PatternKind.RESPONSE_HOLD:
        return all(not p(values[i]) or all(q(values[j]) for j in range(i, i + bound + 1)) for i in starts)
    return all(not p(values[i]) or any(q(values[j]) for j in range(i, i + bound + 1)) for i in starts)


def contract_text(kind, p, q, bound):
    if kind == PatternKind.INVARIANT:
        return f"[{p}] holds during [{bound}]"
    if kind == PatternKind.RESPONSE_HOLD:
        return f"whenever [{p}] occurs [{q}] holds during following [{bound}]"
    return f"whenever [{p}] occurs [{q}] occurs within [{bound}]"


class TestAgainstPatternReading:
    @pytest.mark.slow
    def test_random_traces(self):
        rng = random.Random(7301)
        parsed = {}
        for case in range(1200):
            kind = rng.choice(list(PatternKind))
            p, q = rng.choice(list(CONDITIONS)), rng.choice(list(CONDITIONS))
            bound = rng.randint(0, 4)
            horizon = rng.randint(bound, 8)
            text = contract_text(kind, p, q, bound)
            if text not in parsed:
                parsed[text] = parse_gcsl(text)
            values = [{"a": rng.randint(0, 3), "b": rng.randint(0, 3)} for _ in range(horizon + 1)]
            trace = [int_state(i, v) for i, v in enumerate(values)]
            verdict = reference_eval(translate_to_bltl(parsed[text], horizon), trace)
            expected = pattern_holds(kind, CONDITIONS[p], CONDITIONS[q], bound, values, horizon)
            assert verdict == Verdict.of(expected), f"case {case}: {text} over {horizon}"


class TestEmptyCollections:
    @pytest.fixture
    def trace(self):
        return [int_state(i, {"a": 0}) for i in range(4)]

    @pytest.mark.parametrize("text, expected", [
        ("N.allInstances()->forAll(x | [x.a > 0] holds during [3])", Verdict.TRUE),
        ("N.allInstances()->exists(x | [x.a = 0] holds during [3])", Verdict.FALSE),
        ("M.allInstances()->select(y | y.a > 5)->forAll(x | [x.a > 0] holds during [3])", Verdict.TRUE),
        ("M.allInstances()->select(y | y.a > 5)->exists(x | [x.a = 0] holds during [3])", Verdict.FALSE),
        ("M.allInstances()->forAll(x | [x.a = 0] holds during [3])", Verdict.TRUE),
    ])
    def test_quantified_contract(self, trace, text, expected):
        assert reference_eval(translate_to_bltl(parse_gcsl(text), 3), trace) == expected
