"""Trace validator families, objective, and record serialization."""

import pytest

from fabsched.factory import (
    AssignmentEvent,
    FAMILIES,
    GuardOverride,
    MaintenanceWindow,
    SimulationRecord,
    TraceFormatError,
    completion_rate,
    objective_value,
    read_record,
    validate_trace,
    write_record,
)
from fabsched.scenario import EpisodeInstance, Lot


def make_episode(config, lots, setups=None, start_stage_wip=True):
    """Episode with full control over lots and initial machine setups."""
    if setups is None:
        setups = ((0, 0), (0, 0), (0, 1), (0, 1))[: len(config.machines)]
    return EpisodeInstance(
        scenario_fingerprint=config.fingerprint(),
        tier="low",
        seed=0,
        active_products=tuple(range(len(config.products))),
        demand=(),
        initial_wip=tuple(lots),
        initial_setups=tuple(setups),
        breakdown_seed=1234,
    )


def two_lot_episode(config):
    lots = [Lot(0, 0, 1, 12, 0), Lot(1, 0, 1, 12, 0)]
    return make_episode(config, lots, setups=((0, 0), (1, 0), (0, 1), (1, 1)))


def valid_events():
    return (
        AssignmentEvent(0, 0, 0, 0, 0, 0, 2),
        AssignmentEvent(1, 0, 0, 1, 0, 0, 2),
        AssignmentEvent(0, 1, 0, 2, 2, 0, 2),
        AssignmentEvent(1, 1, 0, 3, 2, 0, 2),
    )


# ------------------------------------------------------------------- families

def test_valid_trace_passes_all_families(tiny_config):
    episode = two_lot_episode(tiny_config)
    report = validate_trace(tiny_config, episode, valid_events())
    assert report.ok
    for family in FAMILIES:
        assert report.passed(family)


def test_empty_trace_is_valid(tiny_config):
    episode = two_lot_episode(tiny_config)
    assert validate_trace(tiny_config, episode, ()).ok


def test_availability_catches_incompatible_machine(tiny_config):
    episode = two_lot_episode(tiny_config)
    # machine 2 only serves the finishing step, not forming
    events = (AssignmentEvent(0, 0, 0, 2, 0, 4, 2),)
    report = validate_trace(tiny_config, episode, events)
    assert not report.passed("availability")


def test_availability_catches_maintenance_overlap(tiny_config):
    episode = two_lot_episode(tiny_config)
    maintenance = (MaintenanceWindow(0, 1, 3, "scheduled"),)
    report = validate_trace(tiny_config, episode, valid_events(), maintenance)
    assert not report.passed("availability")
    assert report.passed("no_overlap")


def test_availability_catches_out_of_horizon_start(tiny_config):
    episode = two_lot_episode(tiny_config)
    events = (AssignmentEvent(0, 0, 0, 0, tiny_config.total_ticks, 0, 2),)
    assert not validate_trace(tiny_config, episode, events).passed("availability")


def test_no_overlap_catches_double_booking(tiny_config):
    episode = make_episode(tiny_config, [Lot(0, 0, 1, 12, 0), Lot(0, 1, 1, 12, 0)],
                           setups=((0, 0), (0, 0), (0, 1), (0, 1)))
    events = (
        AssignmentEvent(0, 0, 0, 0, 0, 0, 2),
        AssignmentEvent(0, 0, 1, 0, 1, 0, 2),
    )
    report = validate_trace(tiny_config, episode, events)
    assert not report.passed("no_overlap")


def test_setup_persistence_catches_wrong_conversion_time(tiny_config):
    episode = two_lot_episode(tiny_config)
    # machine 1 starts set to (beta, forming); an alpha run needs 3 ticks
    events = (AssignmentEvent(0, 0, 0, 1, 0, 0, 2),)
    report = validate_trace(tiny_config, episode, events)
    assert not report.passed("setup_persistence")
    ok_events = (AssignmentEvent(0, 0, 0, 1, 0, 3, 2),)
    assert validate_trace(tiny_config, episode, ok_events).ok


def test_completion_arithmetic_catches_wrong_processing(tiny_config):
    episode = two_lot_episode(tiny_config)
    events = (AssignmentEvent(0, 0, 0, 0, 0, 0, 5),)
    report = validate_trace(tiny_config, episode, events)
    assert not report.passed("completion_arithmetic")


def test_precedence_catches_start_before_previous_completion(tiny_config):
    episode = two_lot_episode(tiny_config)
    events = (
        AssignmentEvent(0, 0, 0, 0, 0, 0, 2),
        AssignmentEvent(0, 1, 0, 2, 1, 0, 2),
    )
    report = validate_trace(tiny_config, episode, events)
    assert not report.passed("precedence")


def test_precedence_catches_event_before_entry_stage(tiny_config):
    lots = [Lot(0, 0, 1, 12, 1)]  # lot enters at the finishing step
    episode = make_episode(tiny_config, lots)
    events = (AssignmentEvent(0, 0, 0, 0, 0, 0, 2),)
    report = validate_trace(tiny_config, episode, events)
    assert not report.passed("precedence")


def test_fifo_catches_out_of_order_service(tiny_config):
    lots = [Lot(0, 0, 1, 24, 0), Lot(0, 1, 1, 24, 0)]
    episode = make_episode(tiny_config, lots)
    # both lots waiting from t=0; k=1 must not start strictly before k=0
    events = (
        AssignmentEvent(0, 0, 1, 0, 0, 0, 2),
        AssignmentEvent(0, 0, 0, 0, 2, 0, 2),
    )
    report = validate_trace(tiny_config, episode, events)
    assert not report.passed("fifo")
    in_order = (
        AssignmentEvent(0, 0, 0, 0, 0, 0, 2),
        AssignmentEvent(0, 0, 1, 0, 2, 0, 2),
    )
    assert validate_trace(tiny_config, episode, in_order).ok


def test_single_assignment_catches_duplicate_stage_visit(tiny_config):
    episode = two_lot_episode(tiny_config)
    events = (
        AssignmentEvent(0, 0, 0, 0, 0, 0, 2),
        AssignmentEvent(0, 0, 0, 0, 2, 0, 2),
    )
    report = validate_trace(tiny_config, episode, events)
    assert not report.passed("single_assignment")


def test_conversion_budget_catches_overdraw(tiny_config):
    lots = [Lot(0, 0, 1, 24, 0), Lot(1, 0, 1, 24, 0), Lot(1, 1, 1, 24, 0)]
    episode = make_episode(tiny_config, lots)
    # three cross-product conversions on machine 0 inside shift 1: 9 > 6
    events = (
        AssignmentEvent(1, 0, 0, 0, 0, 3, 2),
        AssignmentEvent(0, 0, 0, 0, 5, 3, 2),
        AssignmentEvent(1, 0, 1, 0, 10, 3, 2),
    )
    report = validate_trace(tiny_config, episode, events)
    assert not report.passed("conversion_budget")
    families = [f for f in FAMILIES if not report.passed(f)]
    assert families == ["conversion_budget"]


def test_budget_resets_between_shifts(tiny_config):
    lots = [Lot(0, 0, 1, 24, 0), Lot(1, 0, 1, 24, 0), Lot(1, 1, 1, 48, 0)]
    episode = make_episode(tiny_config, lots)
    # two conversions in shift 1 (6 ticks, at the cap), one more in shift 2
    events = (
        AssignmentEvent(1, 0, 0, 0, 0, 3, 2),
        AssignmentEvent(0, 0, 0, 0, 5, 3, 2),
        AssignmentEvent(1, 0, 1, 0, 12, 3, 2),
    )
    assert validate_trace(tiny_config, episode, events).ok


# ---------------------------------------------------------------- trace format

def test_unknown_lot_is_a_format_error(tiny_config):
    episode = two_lot_episode(tiny_config)
    with pytest.raises(TraceFormatError, match="unknown lot"):
        validate_trace(tiny_config, episode, (AssignmentEvent(0, 0, 9, 0, 0, 0, 2),))


def test_unsorted_events_are_a_format_error(tiny_config):
    episode = two_lot_episode(tiny_config)
    events = (
        AssignmentEvent(0, 1, 0, 2, 2, 0, 2),
        AssignmentEvent(0, 0, 0, 0, 0, 0, 2),
    )
    with pytest.raises(TraceFormatError, match="sorted"):
        validate_trace(tiny_config, episode, events)


def test_empty_processing_is_a_format_error(tiny_config):
    episode = two_lot_episode(tiny_config)
    with pytest.raises(TraceFormatError, match="duration"):
        validate_trace(tiny_config, episode, (AssignmentEvent(0, 0, 0, 0, 0, 0, 0),))


# ------------------------------------------------------------------- objective

def test_objective_counts_late_and_unfinished_lots(tiny_config):
    episode = two_lot_episode(tiny_config)
    on_time = {(0, 0): 12, (1, 0): 4}
    assert objective_value(tiny_config, episode, on_time) == 0
    assert completion_rate(tiny_config, episode, on_time) == 1.0
    one_late = {(0, 0): 13, (1, 0): 4}
    assert objective_value(tiny_config, episode, one_late) == 1
    assert completion_rate(tiny_config, episode, one_late) == 0.5
    unfinished = {(0, 0): None, (1, 0): None}
    assert objective_value(tiny_config, episode, unfinished) == 2
    assert completion_rate(tiny_config, episode, unfinished) == 0.0


def test_objective_requires_every_lot(tiny_config):
    episode = two_lot_episode(tiny_config)
    with pytest.raises(ValueError):
        objective_value(tiny_config, episode, {(0, 0): 4})


# ------------------------------------------------------------------ record I/O

def test_record_round_trip(tmp_path, tiny_config):
    record = SimulationRecord(
        scenario_fingerprint=tiny_config.fingerprint(),
        tier="medium",
        episode_seed=42,
        breakdown_seed=7,
        variant="LFORM-RC",
        events=valid_events(),
        maintenance=(MaintenanceWindow(1, 18, 21, "scheduled"),
                     MaintenanceWindow(2, 5, 8, "breakdown")),
        completions={(0, 0): 4, (1, 0): None},
        leader_rewards=(0, -1, 0, -2),
        op_rewards={0: (0, -1, 0, 0), 1: (0, 0, 0, -2)},
        guard_overrides=(GuardOverride(3, 0, 0, True, 1, 0, "redirect"),
                         GuardOverride(5, 1, 0, True, 0, 0, "reject")),
    )
    path = tmp_path / "episode.trace"
    write_record(record, path, metrics={"tardiness": 5, "completion_rate": 0.5})
    loaded, header = read_record(path)
    assert loaded == record
    assert header["tier"] == "medium"
    assert header["episode_seed"] == "42"
    assert header["metric tardiness"] == "5"
    assert loaded.team_reward == -3


def test_read_record_rejects_other_files(tmp_path):
    path = tmp_path / "not_a_trace.txt"
    path.write_text("just text\n")
    with pytest.raises(TraceFormatError):
        read_record(path)
