from pathlib import Path

import pytest

from descriptor import load_model
from model_core import (
    Attribute, AtomicComponent, HierarchicalComponent, ROOT_TYPE_NAME, SimulationState, Subcomponent, System,
    ValueType,
)

MODELS_DIR = Path(__file__).resolve().parent.parent / "models"


def read_model(name: str) -> str:
    return (MODELS_DIR / name).read_text(encoding="utf-8")


def coin_text(heads_rate: float, tails_rate: float) -> str:
    """A coin tossed once at the first step with the given rate weights."""
    return f"""
type Coin {{
    attr heads: bool = false;
    attr tosses: int = 0;
    cmd land_heads: when tosses = 0 rate {heads_rate} do heads := true, tosses := tosses + 1;
    cmd land_tails: when tosses = 0 rate {tails_rate} do heads := false, tosses := tosses + 1;
}}
system {{
    instance coin: Coin;
    closed;
}}
"""


def int_state(step: int, values: dict, name: str = "m", type_name: str = "M", open_flag: bool = False) -> SimulationState:
    """A snapshot with one atomic component holding integer attributes."""
    attrs = tuple(Attribute(k, ValueType.INT, v) for k, v in values.items())
    root = HierarchicalComponent(ROOT_TYPE_NAME, (Subcomponent(name, AtomicComponent(type_name, attrs)),))
    return SimulationState(step, step, System(root, open_flag=open_flag))


@pytest.fixture
def models_dir() -> Path:
    return MODELS_DIR


@pytest.fixture
def counter_model():
    return load_model(read_model("counter.sosd"), global_seed=1)


@pytest.fixture
def coin_model():
    return load_model(read_model("coin.sosd"), global_seed=3)


@pytest.fixture
def dtmc_model():
    return load_model(read_model("dtmc.sosd"), global_seed=5)


@pytest.fixture
def ambulance_text() -> str:
    return read_model("ambulance.sosd")


@pytest.fixture
def fleet_system() -> System:
    """fleet{amb1(fuel=10), amb2(fuel=0)} linked by a relation, open."""
    def ambulance(fuel):
        return AtomicComponent("Ambulance", (Attribute("fuel", ValueType.INT, fuel),
                                             Attribute("speed", ValueType.REAL, 1.5)))
    fleet = HierarchicalComponent("Fleet", (
        Subcomponent("amb1", ambulance(10)),
        Subcomponent("amb2", ambulance(0)),
    ))
    root = HierarchicalComponent(ROOT_TYPE_NAME, (Subcomponent("fleet", fleet),))
    return System(root, open_flag=True)


@pytest.fixture
def fleet_state(fleet_system) -> SimulationState:
    return SimulationState(0, 0, fleet_system)
