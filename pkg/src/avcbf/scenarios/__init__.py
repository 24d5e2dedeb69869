"""Scenario registry: ``make_scenario("acc", "avcbf", {...})``."""

from __future__ import annotations

from .acc import ACC_PRESETS, AccParams, PacbfParams, acc_resistance, make_acc
from .base import CdProfile, InitialSetError, Scenario, StateDomainError
from .unicycle import UNICYCLE_PRESETS, UnicycleParams, make_unicycle, target_reached

SCENARIOS: dict[str, tuple[str, ...]] = {
    "acc": tuple(ACC_PRESETS),
    "unicycle": tuple(UNICYCLE_PRESETS),
}


def make_scenario(
    scenario_id: str,
    variant: str,
    params: dict | None = None,
    pacbf_params: dict | None = None,
) -> Scenario:
    if scenario_id == "acc":
        return make_acc(variant, params, pacbf_params)
    if pacbf_params:
        raise ValueError("pacbf_params only apply to the acc/pacbf scenario")
    if scenario_id == "unicycle":
        return make_unicycle(variant, params)
    raise KeyError(f"unknown scenario {scenario_id!r}; choose from {sorted(SCENARIOS)}")


__all__ = [
    "AccParams", "CdProfile", "InitialSetError", "PacbfParams", "SCENARIOS", "Scenario",
    "StateDomainError", "UnicycleParams", "acc_resistance", "make_scenario", "target_reached",
]
