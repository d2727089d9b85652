"""Shared fixtures: a generated desk-scale scenario and a handcrafted tiny one."""

import pytest

from fabsched.scenario import (
    BreakdownModel,
    DemandModel,
    ProductSpec,
    ScenarioConfig,
    ScenarioShape,
    generate_scenario,
)


def build_tiny_config(n_shifts: int = 4) -> ScenarioConfig:
    """Two products through a two-step line with two machines per step.

    Processing is cheap (2 ticks per lot per step) but conversions are
    expensive relative to the shift (2-4 ticks against a budget of 6), so
    schedule quality hinges on when machines change setups.
    """
    ops = ("forming", "finishing")
    machines = ("m0", "m1", "m2", "m3")
    stage_machines = (("m0", "m1"), ("m2", "m3"))
    products = (
        ProductSpec(id="alpha", route=ops, units=(1, 1),
                    stage_processing=(2, 2), stage_machines=stage_machines),
        ProductSpec(id="beta", route=ops, units=(1, 1),
                    stage_processing=(2, 2), stage_machines=stage_machines),
    )
    setups = [("alpha", "forming"), ("beta", "forming"),
              ("alpha", "finishing"), ("beta", "finishing")]
    conversion = {}
    for (pa, oa) in setups:
        for (pb, ob) in setups:
            if (pa, oa) == (pb, ob):
                co = 0
            elif pa == pb:
                co = 2
            elif oa == ob:
                co = 3
            else:
                co = 4
            conversion[(pa, oa, pb, ob)] = co
    return ScenarioConfig(
        name="tiny-two-step",
        shift_ticks=12,
        n_shifts=n_shifts,
        conversion_budget=6,
        operations=ops,
        machines=machines,
        products=products,
        conversion=conversion,
        scheduled_maintenance=(("m1", 18, 21),) if n_shifts >= 2 else (),
        breakdown=BreakdownModel(mtbf_ticks={m: 60.0 for m in machines},
                                 repair_range=(2, 4)),
        demand=DemandModel(rates={"alpha": 0.55, "beta": 0.65},
                           tier_multipliers={"low": 1.0, "medium": 3.0, "high": 5.0},
                           initial_wip_rate=0.5),
    )


@pytest.fixture(scope="session")
def tiny_config() -> ScenarioConfig:
    return build_tiny_config()


@pytest.fixture(scope="session")
def gen_config() -> ScenarioConfig:
    return generate_scenario(ScenarioShape(3, 4, 5, 1.0, n_shifts=4), seed=7)
