from dataclasses import replace

import pytest

from errors import ClosedSystem, DuplicateName, PathNotFound, TypeMismatch
from model_core import (
    AddRelation, AddSubcomponent, Attribute, AtomicComponent, ComponentRef, INT64_MAX, RemoveRelation,
    RemoveSubcomponent, Relation, SimulationState, Slot, Subcomponent, ValueType, apply_structural_change,
    change_structure, coerce_value, format_path, instances_of_type, parse_path, resolve_path, resolve_value,
    set_attributes, update_component, validate_system,
)


class TestValues:
    def test_int_widens_to_real(self):
        assert coerce_value(3, ValueType.REAL) == 3.0
        assert isinstance(coerce_value(3, ValueType.REAL), float)

    def test_bool_is_not_int(self):
        with pytest.raises(TypeMismatch):
            coerce_value(True, ValueType.INT)

    def test_int_range(self):
        assert coerce_value(INT64_MAX, ValueType.INT) == INT64_MAX
        with pytest.raises(TypeMismatch):
            coerce_value(INT64_MAX + 1, ValueType.INT)

    def test_non_finite_real(self):
        with pytest.raises(TypeMismatch):
            coerce_value(float("nan"), ValueType.REAL)

    def test_attribute_checks_declared_type(self):
        with pytest.raises(TypeMismatch):
            Attribute("fuel", ValueType.INT, "full")

    def test_paths(self):
        assert parse_path("fleet.amb1.fuel") == ("fleet", "amb1", "fuel")
        assert format_path(("fleet", "amb1")) == "fleet.amb1"
        with pytest.raises(ValueError):
            parse_path("fleet..fuel")


class TestResolution:
    def test_attribute(self, fleet_state):
        assert resolve_path(fleet_state, ("fleet", "amb1", "fuel")) == 10

    def test_component(self, fleet_state):
        found = resolve_path(fleet_state, ("fleet", "amb2"))
        assert isinstance(found, ComponentRef)
        assert found.type_name == "Ambulance"
        assert found.name == "amb2"

    def test_missing_segment(self, fleet_state):
        with pytest.raises(PathNotFound) as e:
            resolve_path(fleet_state, ("fleet", "amb9", "fuel"))
        assert e.value.segment == "amb9"

    def test_through_attribute(self, fleet_state):
        with pytest.raises(TypeMismatch):
            resolve_path(fleet_state, ("fleet", "amb1", "fuel", "level"))

    def test_value_of_component(self, fleet_state):
        with pytest.raises(TypeMismatch):
            resolve_value(fleet_state, ("fleet",))

    def test_instances_in_tree_order(self, fleet_state):
        refs = instances_of_type(fleet_state, "Ambulance")
        assert [r.path for r in refs] == [("fleet", "amb1"), ("fleet", "amb2")]
        assert instances_of_type(fleet_state, "Nothing") == ()


class TestUpdates:
    def test_set_attributes_keeps_old_snapshot(self, fleet_system):
        updated = set_attributes(fleet_system, [(("fleet", "amb1", "fuel"), 4)])
        assert resolve_value(updated, ("fleet", "amb1", "fuel")) == 4
        assert resolve_value(fleet_system, ("fleet", "amb1", "fuel")) == 10
        assert updated.structure_version == fleet_system.structure_version
        assert updated.index is fleet_system.index

    def test_set_attributes_copies_only_written_branch(self, fleet_system):
        updated = set_attributes(fleet_system, [(("fleet", "amb1", "fuel"), 4), (("fleet", "amb1", "speed"), 2.0)])
        before = fleet_system.root.child("fleet").component
        after = updated.root.child("fleet").component
        assert after.child("amb2") is before.child("amb2")
        assert after.child("amb1").component.attribute("speed").value == 2.0
        assert resolve_value(updated, ("fleet", "amb1", "fuel")) == 4

    def test_later_write_to_same_attribute_wins(self, fleet_system):
        updated = set_attributes(fleet_system, [(("fleet", "amb2", "fuel"), 1), (("fleet", "amb2", "fuel"), 2)])
        assert resolve_value(updated, ("fleet", "amb2", "fuel")) == 2

    def test_set_component_path(self, fleet_system):
        with pytest.raises(TypeMismatch):
            set_attributes(fleet_system, [(("fleet", "amb1"), 4)])

    def test_slots_follow_attribute_writes(self, fleet_system):
        path = ("fleet", "amb1", "fuel")
        assert resolve_value(fleet_system, path) == 10
        updated = set_attributes(fleet_system, [(path, 3)])
        assert fleet_system.index.locate(fleet_system.root, path) == Slot((0, 0), 0)
        assert resolve_value(updated, path) == 3
        assert resolve_value(fleet_system, path) == 10

    def test_missing_name_is_not_cached(self, fleet_system):
        path = ("fleet", "amb1", "crew")
        with pytest.raises(PathNotFound):
            resolve_path(fleet_system, path)
        grown = update_component(fleet_system, ("fleet", "amb1"),
                                 lambda node: node.with_attribute(Attribute("crew", ValueType.INT, 2)))
        assert grown.index is fleet_system.index
        assert resolve_value(grown, path) == 2

    def test_set_unknown_attribute(self, fleet_system):
        with pytest.raises(PathNotFound):
            set_attributes(fleet_system, [(("fleet", "amb1", "altitude"), 4)])

    def test_set_wrong_type(self, fleet_system):
        with pytest.raises(TypeMismatch):
            set_attributes(fleet_system, [(("fleet", "amb1", "fuel"), "empty")])


class TestStructuralChanges:
    def test_add_subcomponent(self, fleet_state):
        amb = AtomicComponent("Ambulance", (Attribute("fuel", ValueType.INT, 7),))
        after = apply_structural_change(fleet_state, AddSubcomponent(("fleet",), Subcomponent("amb3", amb)))
        assert after.structure_changed
        assert after.system.structure_version == fleet_state.system.structure_version + 1
        assert len(instances_of_type(after, "Ambulance")) == 3
        assert len(instances_of_type(fleet_state, "Ambulance")) == 2

    def test_duplicate_name(self, fleet_state):
        amb = AtomicComponent("Ambulance")
        with pytest.raises(DuplicateName):
            apply_structural_change(fleet_state, AddSubcomponent(("fleet",), Subcomponent("amb1", amb)))

    def test_add_into_atomic(self, fleet_state):
        with pytest.raises(TypeMismatch):
            apply_structural_change(fleet_state, AddSubcomponent(("fleet", "amb1"),
                                                                 Subcomponent("x", AtomicComponent("X"))))

    def test_closed_system(self, fleet_system):
        closed = SimulationState(0, 0, replace(fleet_system, open_flag=False))
        with pytest.raises(ClosedSystem):
            apply_structural_change(closed, RemoveSubcomponent(("fleet", "amb1")))

    def test_remove_drops_relations(self, fleet_system):
        linked = change_structure(fleet_system, AddRelation(("fleet",), Relation("backup", "amb1", "amb2")))
        removed = change_structure(linked, RemoveSubcomponent(("fleet", "amb2")))
        fleet = removed.root.child("fleet").component
        assert fleet.relation("backup") is None
        assert validate_system(removed) == []

    def test_relation_needs_both_ends(self, fleet_system):
        with pytest.raises(PathNotFound):
            change_structure(fleet_system, AddRelation(("fleet",), Relation("r", "amb1", "amb7")))

    def test_remove_missing_relation(self, fleet_system):
        with pytest.raises(PathNotFound):
            change_structure(fleet_system, RemoveRelation(("fleet",), "none"))

    def test_index_rebuilt_after_change(self, fleet_state):
        instances_of_type(fleet_state, "Ambulance")
        after = apply_structural_change(fleet_state, RemoveSubcomponent(("fleet", "amb1")))
        assert after.system.index is not fleet_state.system.index
        assert [r.path for r in instances_of_type(after, "Ambulance")] == [("fleet", "amb2")]

    def test_relation_same_ends(self):
        with pytest.raises(ValueError):
            Relation("loop", "a", "a")
