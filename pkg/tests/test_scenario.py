"""Scenario generation, validation, serialization, and episode sampling."""

import json

import numpy as np
import pytest

from fabsched.scenario import (
    BreakdownModel,
    DemandModel,
    InfeasibleShapeError,
    ProductSpec,
    ScenarioConfig,
    ScenarioError,
    ScenarioShape,
    TIERS,
    generate_scenario,
    load_scenario,
    sample_episode,
    save_scenario,
    validate_episode,
)

from conftest import build_tiny_config


def _minimal_kwargs(**overrides):
    """A valid one-product, one-operation, one-machine config as kwargs."""
    kwargs = dict(
        name="minimal",
        shift_ticks=4,
        n_shifts=2,
        conversion_budget=2,
        operations=("only",),
        machines=("m0",),
        products=(
            ProductSpec(id="p", route=("only",), units=(1, 1),
                        stage_processing=(1,), stage_machines=(("m0",),)),
        ),
        conversion={("p", "only", "p", "only"): 0},
        scheduled_maintenance=(),
        breakdown=BreakdownModel(mtbf_ticks={"m0": 50.0}, repair_range=(1, 2)),
        demand=DemandModel(rates={"p": 0.5},
                           tier_multipliers={"low": 1.0, "medium": 2.0, "high": 3.0}),
    )
    kwargs.update(overrides)
    return kwargs


# ------------------------------------------------------------------ generator

def test_generated_scenario_meets_shape_targets():
    for seed in range(6):
        shape = ScenarioShape(3, 4, 5, 1.0, n_shifts=4)
        config = generate_scenario(shape, seed)
        assert len(config.products) == 3
        assert len(config.operations) == 4
        assert len(config.machines) == 5
        assert abs(config.operation_graph_out_degree() - 1.0) <= 0.15


def test_generated_scenario_covers_operations_and_machines():
    config = generate_scenario(ScenarioShape(4, 5, 8, 1.2, n_shifts=4), seed=3)
    used_ops = {o for route in config.routes_idx for o in route}
    assert used_ops == set(range(len(config.operations)))
    used_machines = set()
    for p in range(len(config.products)):
        for ms in config.compat[p]:
            used_machines |= ms
    assert used_machines == set(range(len(config.machines)))


def test_generated_scenario_is_deterministic():
    a = generate_scenario(ScenarioShape(3, 4, 5, 1.0), seed=11)
    b = generate_scenario(ScenarioShape(3, 4, 5, 1.0), seed=11)
    assert a.to_dict() == b.to_dict()
    c = generate_scenario(ScenarioShape(3, 4, 5, 1.0), seed=12)
    assert a.to_dict() != c.to_dict()


def test_generator_rejects_infeasible_shapes():
    with pytest.raises(InfeasibleShapeError):
        generate_scenario(ScenarioShape(0, 4, 5, 1.0), seed=0)
    with pytest.raises(InfeasibleShapeError):
        generate_scenario(ScenarioShape(3, 4, 5, 50.0), seed=0)


# ----------------------------------------------------------------- validation

def test_validate_rejects_empty_machine_set():
    kwargs = _minimal_kwargs(products=(
        ProductSpec(id="p", route=("only",), units=(1, 1),
                    stage_processing=(1,), stage_machines=((),)),
    ))
    with pytest.raises(ScenarioError, match="empty compatible machine set"):
        ScenarioConfig(**kwargs)


def test_validate_rejects_missing_conversion_entry():
    kwargs = _minimal_kwargs(
        operations=("a", "b"),
        products=(
            ProductSpec(id="p", route=("a", "b"), units=(1, 1),
                        stage_processing=(1, 1), stage_machines=(("m0",), ("m0",))),
        ),
        conversion={("p", "a", "p", "a"): 0, ("p", "b", "p", "b"): 0,
                    ("p", "a", "p", "b"): 1},
    )
    with pytest.raises(ScenarioError, match="missing conversion entry"):
        ScenarioConfig(**kwargs)


def test_validate_rejects_nonzero_identity_conversion():
    kwargs = _minimal_kwargs(conversion={("p", "only", "p", "only"): 1})
    with pytest.raises(ScenarioError, match="identical setup"):
        ScenarioConfig(**kwargs)


def test_validate_rejects_reentrant_machine_set_mismatch():
    kwargs = _minimal_kwargs(
        machines=("m0", "m1"),
        products=(
            ProductSpec(id="p", route=("only", "only"), units=(1, 1),
                        stage_processing=(1, 1),
                        stage_machines=(("m0",), ("m1",))),
        ),
        breakdown=BreakdownModel(mtbf_ticks={"m0": 50.0, "m1": 50.0},
                                 repair_range=(1, 2)),
    )
    with pytest.raises(ScenarioError, match="re-entrant"):
        ScenarioConfig(**kwargs)


def test_validate_accepts_reentrant_route_with_uniform_machines():
    kwargs = _minimal_kwargs(
        products=(
            ProductSpec(id="p", route=("only", "only"), units=(1, 1),
                        stage_processing=(1, 2),
                        stage_machines=(("m0",), ("m0",))),
        ),
    )
    config = ScenarioConfig(**kwargs)
    assert config.routes_idx[0] == [0, 0]
    assert config.op_stages[0] == [(0, 0), (0, 1)]


def test_validate_rejects_out_of_range_maintenance():
    kwargs = _minimal_kwargs(scheduled_maintenance=(("m0", 6, 12),))
    with pytest.raises(ScenarioError, match="maintenance"):
        ScenarioConfig(**kwargs)


def test_conversion_lookup_identity_is_zero(tiny_config):
    assert tiny_config.co(0, 0, 0, 0) == 0
    assert tiny_config.co(1, 1, 1, 1) == 0
    assert tiny_config.co(0, 0, 1, 0) == 3
    assert tiny_config.co(0, 0, 0, 1) == 2
    assert tiny_config.co(0, 0, 1, 1) == 4


# -------------------------------------------------------------- serialization

def test_scenario_round_trip(tmp_path, gen_config):
    path = tmp_path / "scenario.json"
    save_scenario(gen_config, path)
    loaded = load_scenario(path)
    assert loaded.to_dict() == gen_config.to_dict()
    assert loaded.fingerprint() == gen_config.fingerprint()


def test_fingerprint_ignores_name_horizon_and_maintenance(tiny_config):
    fp = tiny_config.fingerprint()
    renamed = json.loads(json.dumps(tiny_config.to_dict()))
    renamed["name"] = "other"
    renamed["n_shifts"] = 9
    renamed["scheduled_maintenance"] = []
    from fabsched.scenario import _config_from_dict

    other = _config_from_dict(renamed)
    assert other.fingerprint() == fp


def test_fingerprint_changes_with_processing_times(tiny_config):
    altered = json.loads(json.dumps(tiny_config.to_dict()))
    altered["products"][0]["stage_processing"] = [3, 2]
    from fabsched.scenario import _config_from_dict

    assert _config_from_dict(altered).fingerprint() != tiny_config.fingerprint()


def test_with_horizon_crops_maintenance(tiny_config):
    view = tiny_config.with_horizon(1)
    assert view.n_shifts == 1
    assert view.scheduled_maintenance == ()
    assert view.fingerprint() == tiny_config.fingerprint()


# ------------------------------------------------------------------- episodes

def test_sample_episode_is_deterministic(tiny_config):
    a = sample_episode(tiny_config, "medium", 5)
    b = sample_episode(tiny_config, "medium", 5)
    assert a.to_dict() == b.to_dict()
    c = sample_episode(tiny_config, "medium", 6)
    assert a.to_dict() != c.to_dict()
    d = sample_episode(tiny_config, "high", 5)
    assert a.to_dict() != d.to_dict()


def test_sampled_episodes_validate(tiny_config, gen_config):
    for config in (tiny_config, gen_config):
        for tier in TIERS:
            for seed in range(5):
                episode = sample_episode(config, tier, seed)
                validate_episode(config, episode)


def test_episode_dues_are_shift_boundaries(tiny_config):
    episode = sample_episode(tiny_config, "high", 1)
    for lot in episode.all_lots():
        assert lot.due % tiny_config.shift_ticks == 0
        assert tiny_config.shift_ticks <= lot.due <= tiny_config.total_ticks


def test_demand_matrix_matches_lots(tiny_config):
    episode = sample_episode(tiny_config, "high", 2)
    matrix = episode.demand_by_shift(tiny_config)
    for p in range(len(tiny_config.products)):
        for shift in range(tiny_config.n_shifts):
            due = (shift + 1) * tiny_config.shift_ticks
            n = sum(1 for lot in episode.all_lots()
                    if lot.product == p and lot.due == due)
            assert matrix[p, shift] == n
    assert matrix.sum() == len(episode.all_lots())


def test_product_dropout_keeps_at_least_one_product(tiny_config):
    rng_hits = set()
    for seed in range(40):
        episode = sample_episode(tiny_config, "medium", seed, product_dropout=0.9)
        assert len(episode.active_products) >= 1
        rng_hits.add(tuple(episode.active_products))
        for lot in episode.all_lots():
            assert lot.product in episode.active_products
    assert len(rng_hits) > 1


def test_higher_tier_means_more_demand(tiny_config):
    lows = [len(sample_episode(tiny_config, "low", s).demand) for s in range(30)]
    highs = [len(sample_episode(tiny_config, "high", s).demand) for s in range(30)]
    assert np.mean(highs) > np.mean(lows)


def test_validate_episode_rejects_fingerprint_mismatch(tiny_config, gen_config):
    episode = sample_episode(gen_config, "low", 0)
    with pytest.raises(ScenarioError, match="fingerprint"):
        validate_episode(tiny_config, episode)


def test_tiny_config_builder_horizon_parameter():
    short = build_tiny_config(n_shifts=1)
    assert short.n_shifts == 1
    assert short.scheduled_maintenance == ()
