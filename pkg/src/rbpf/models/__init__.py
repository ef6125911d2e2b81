"""Concrete models and their bundled scenarios."""

from rbpf.models.config import load_model, load_scenario, model_from_dict, model_to_dict, scenario_names
from rbpf.models.grid import GridWorldModel
from rbpf.models.jmls import JmlsModel


def corridor_scenario():
    """8-cell out-and-back corridor; returns ``(model, actions)``."""
    model = load_scenario("corridor")
    return model, model.actions


def ten_by_ten_scenario():
    """10x10 map with a 3x3 sensor and a covering sweep; returns ``(model, actions)``."""
    model = load_scenario("ten_by_ten")
    return model, model.actions


__all__ = [
    "GridWorldModel",
    "JmlsModel",
    "corridor_scenario",
    "load_model",
    "load_scenario",
    "model_from_dict",
    "model_to_dict",
    "scenario_names",
    "ten_by_ten_scenario",
]
