"""Factory-core types, the schedule-trace validator and the objective.

The validator rebuilds machine timelines, setups and lot flow from the raw
assignment events alone. It shares no state or helper code with the
simulator, so it can serve as an independent check on any trace, simulated
or imported.

Constraint families checked:

- availability: events lie inside the horizon on machines compatible with
  the (product, stage) and never overlap realized maintenance downtime
- no_overlap: one lot at a time per machine
- setup_persistence: setups change exactly at assignments and each event
  carries the exact conversion ticks its setup change requires
- completion_arithmetic: processing ticks equal per-unit time times units;
  completion is start + conversion + processing
- precedence: a stage starts only after the lot finished its previous stage
- fifo: within a (product, operation) queue, a later-arrived lot never
  starts service strictly before an earlier-arrived one (ties by lot index)
- single_assignment: at most one event per (product, stage, lot)
- conversion_budget: per machine and shift, conversion ticks stay within
  the shift budget (a conversion debits the shift it starts in)
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .scenario import EpisodeInstance, ScenarioConfig

FAMILIES = (
    "availability",
    "no_overlap",
    "setup_persistence",
    "completion_arithmetic",
    "precedence",
    "fifo",
    "single_assignment",
    "conversion_budget",
)

TRACE_FORMAT = "fabsched-trace-v1"


class TraceFormatError(ValueError):
    """Raised for malformed traces: unknown ids, bad ordering, negative fields."""


@dataclass(frozen=True)
class AssignmentEvent:
    """One machine assignment: optional setup conversion followed by processing."""

    product: int
    stage: int
    k: int
    machine: int
    t_start: int
    conversion_ticks: int
    processing_ticks: int

    @property
    def completion(self) -> int:
        return self.t_start + self.conversion_ticks + self.processing_ticks


@dataclass(frozen=True)
class MaintenanceWindow:
    """Realized downtime [start, end) on a machine; kind is scheduled or breakdown."""

    machine: int
    start: int
    end: int
    kind: str


@dataclass(frozen=True)
class GuardOverride:
    """A conversion-guard intervention: the follower intent and the chosen setup."""

    tick: int
    machine: int
    operation: int
    intent_convert: bool
    intent_product: int
    chosen_product: int
    reason: str


@dataclass
class SimulationRecord:
    """Everything one episode run produced: trace, downtime, rewards, overrides."""

    scenario_fingerprint: str
    tier: str
    episode_seed: int
    breakdown_seed: int
    variant: str
    events: tuple[AssignmentEvent, ...]
    maintenance: tuple[MaintenanceWindow, ...]
    completions: dict[tuple[int, int], int | None]
    leader_rewards: tuple[int, ...]
    op_rewards: dict[int, tuple[int, ...]]
    guard_overrides: tuple[GuardOverride, ...]

    @property
    def team_reward(self) -> int:
        return int(sum(self.leader_rewards))


@dataclass
class ValidationReport:
    """Violations grouped by constraint family; empty everywhere means valid."""

    violations: dict[str, list[str]] = field(
        default_factory=lambda: {f: [] for f in FAMILIES}
    )

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    def passed(self, family: str) -> bool:
        return not self.violations[family]

    def add(self, family: str, message: str):
        self.violations[family].append(message)

    def summary(self) -> str:
        lines = []
        for family in FAMILIES:
            bad = self.violations[family]
            mark = "ok" if not bad else f"FAIL ({len(bad)})"
            lines.append(f"{family}: {mark}")
            lines.extend(f"  {m}" for m in bad[:10])
        return "\n".join(lines)


def _lot_table(config: ScenarioConfig, episode: EpisodeInstance):
    lots = {}
    for lot in episode.all_lots():
        lots[(lot.product, lot.k)] = lot
    return lots


def validate_trace(
    config: ScenarioConfig,
    episode: EpisodeInstance,
    events: tuple[AssignmentEvent, ...],
    maintenance: tuple[MaintenanceWindow, ...] = (),
) -> ValidationReport:
    """Check a trace against every constraint family.

    Raises TraceFormatError for malformed input (unknown ids, out-of-range
    stages, negative fields, events not ordered by start tick with machines
    ascending inside one tick). Returns a ValidationReport; an empty trace is
    trivially valid.
    """
    lots = _lot_table(config, episode)
    n_machines = len(config.machines)

    prev = None
    for e in events:
        if (e.product, e.k) not in lots:
            raise TraceFormatError(f"event references unknown lot ({e.product},{e.k})")
        route = config.routes_idx[e.product]
        if not (0 <= e.stage < len(route)):
            raise TraceFormatError(
                f"event lot ({e.product},{e.k}) stage {e.stage} outside its route"
            )
        if not (0 <= e.machine < n_machines):
            raise TraceFormatError(f"event references unknown machine {e.machine}")
        if e.conversion_ticks < 0 or e.processing_ticks <= 0 or e.t_start < 0:
            raise TraceFormatError(f"event has negative or empty duration fields: {e}")
        if prev is not None:
            if e.t_start < prev.t_start or (
                e.t_start == prev.t_start and e.machine <= prev.machine
            ):
                raise TraceFormatError(
                    "events must be sorted by start tick with machines ascending within a tick"
                )
        prev = e
    for w in maintenance:
        if not (0 <= w.machine < n_machines):
            raise TraceFormatError(f"maintenance window references unknown machine {w.machine}")
        if w.start >= w.end:
            raise TraceFormatError(f"empty maintenance window {w}")

    report = ValidationReport()
    total = config.total_ticks

    # availability and machine no-overlap
    per_machine: dict[int, list[AssignmentEvent]] = {l: [] for l in range(n_machines)}
    for e in events:
        per_machine[e.machine].append(e)
        if not (0 <= e.t_start < total):
            report.add("availability", f"event starts outside horizon: {e}")
        o = config.routes_idx[e.product][e.stage]
        if e.machine not in config.compat[e.product][e.stage]:
            report.add(
                "availability",
                f"machine {e.machine} not compatible with product {e.product} stage {e.stage}",
            )
        for w in maintenance:
            if w.machine == e.machine and e.t_start < w.end and w.start < e.completion:
                report.add(
                    "availability",
                    f"event on machine {e.machine} at t={e.t_start} overlaps {w.kind} downtime",
                )
    for l, evs in per_machine.items():
        for a, b in zip(evs, evs[1:]):
            if b.t_start < a.completion:
                report.add(
                    "no_overlap",
                    f"machine {l}: event at t={b.t_start} starts before t={a.completion}",
                )

    # setup persistence: walk each machine's events, tracking (product, operation)
    for l, evs in per_machine.items():
        setup = episode.initial_setups[l]
        for e in evs:
            o = config.routes_idx[e.product][e.stage]
            expected = config.co(setup[0], setup[1], e.product, o)
            if e.conversion_ticks != expected:
                report.add(
                    "setup_persistence",
                    f"machine {l} t={e.t_start}: conversion {e.conversion_ticks} ticks, "
                    f"setup {setup}->({e.product},{o}) requires {expected}",
                )
            setup = (e.product, o)

    # completion arithmetic
    for e in events:
        lot = lots[(e.product, e.k)]
        want = config.pr[e.product][e.stage] * lot.units
        if e.processing_ticks != want:
            report.add(
                "completion_arithmetic",
                f"lot ({e.product},{e.k}) stage {e.stage}: processing {e.processing_ticks}, "
                f"expected {want}",
            )

    # single assignment per (product, stage, lot)
    by_stage: dict[tuple[int, int, int], AssignmentEvent] = {}
    for e in events:
        key = (e.product, e.stage, e.k)
        if key in by_stage:
            report.add("single_assignment", f"duplicate assignment for {key}")
        else:
            by_stage[key] = e

    # precedence: each stage starts after the previous stage's completion;
    # stages before the lot's entry stage must not appear at all
    arrivals: dict[tuple[int, int, int], int] = {}
    for (p, j, k), e in sorted(by_stage.items()):
        lot = lots[(p, k)]
        if j < lot.start_stage:
            report.add(
                "precedence",
                f"lot ({p},{k}) has an event at stage {j} before its entry stage {lot.start_stage}",
            )
            continue
        if j == lot.start_stage:
            arrival = 0
        else:
            prev_e = by_stage.get((p, j - 1, k))
            if prev_e is None:
                report.add("precedence", f"lot ({p},{k}) stage {j} has no stage {j - 1} event")
                continue
            arrival = prev_e.completion
        arrivals[(p, j, k)] = arrival
        if e.t_start < arrival:
            report.add(
                "precedence",
                f"lot ({p},{k}) stage {j} starts at {e.t_start} before arrival {arrival}",
            )

    # FIFO per (product, operation) queue: a later arrival never starts
    # strictly earlier; equal arrivals serve in lot-index order
    queues: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    for (p, j, k), e in by_stage.items():
        if (p, j, k) not in arrivals:
            continue
        o = config.routes_idx[p][j]
        queues.setdefault((p, o), []).append((arrivals[(p, j, k)], k, e.t_start))
    for (p, o), entries in sorted(queues.items()):
        entries.sort()
        for i, (arr_a, k_a, start_a) in enumerate(entries):
            for arr_b, k_b, start_b in entries[i + 1 :]:
                if start_b < start_a:
                    report.add(
                        "fifo",
                        f"queue ({p},{o}): lot k={k_b} (arrived {arr_b}) started {start_b} "
                        f"before lot k={k_a} (arrived {arr_a}, started {start_a})",
                    )

    # conversion budget per machine and shift
    used: dict[tuple[int, int], int] = {}
    for e in events:
        if e.conversion_ticks > 0:
            key = (e.machine, e.t_start // config.shift_ticks)
            used[key] = used.get(key, 0) + e.conversion_ticks
    for (l, shift), ticks in sorted(used.items()):
        if ticks > config.conversion_budget:
            report.add(
                "conversion_budget",
                f"machine {l} shift {shift + 1}: {ticks} conversion ticks exceed "
                f"budget {config.conversion_budget}",
            )

    return report


def objective_value(
    config: ScenarioConfig,
    episode: EpisodeInstance,
    completions: dict[tuple[int, int], int | None],
) -> int:
    """Number of delayed lots: due within the horizon and finished late or not at all.

    completions maps every (product, k) of the episode to its final-stage
    completion tick, or None if unfinished. A missing lot raises ValueError
    (its fate would be ambiguous); lots due after the horizon are excluded.
    """
    lots = _lot_table(config, episode)
    unknown = set(completions) - set(lots)
    if unknown:
        raise ValueError(f"completions reference unknown lots: {sorted(unknown)[:5]}")
    delayed = 0
    for key, lot in sorted(lots.items()):
        if key not in completions:
            raise ValueError(f"lot {key} missing from completions; cannot decide if delayed")
        if lot.due > config.total_ticks:
            continue
        c = completions[key]
        if c is None or c > lot.due:
            delayed += 1
    return delayed


def completion_rate(config: ScenarioConfig, episode: EpisodeInstance,
                    completions: dict[tuple[int, int], int | None]) -> float:
    """1 - delayed/total over lots due within the horizon; 1.0 when no lots qualify."""
    total = sum(1 for lot in episode.all_lots() if lot.due <= config.total_ticks)
    if total == 0:
        return 1.0
    return 1.0 - objective_value(config, episode, completions) / total


def write_record(record: SimulationRecord, path, metrics: dict | None = None) -> None:
    """Write a line-oriented trace file: header comments, then one record per line.

    Line kinds: E assignment event, M maintenance window, R leader shift
    reward, O per-operation shift reward, G guard override.
    """
    lines = [f"# {TRACE_FORMAT}"]
    lines.append(f"# scenario_fingerprint: {record.scenario_fingerprint}")
    lines.append(f"# tier: {record.tier}")
    lines.append(f"# episode_seed: {record.episode_seed}")
    lines.append(f"# breakdown_seed: {record.breakdown_seed}")
    lines.append(f"# variant: {record.variant}")
    lines.append(f"# team_reward: {record.team_reward}")
    for key, value in sorted((metrics or {}).items()):
        lines.append(f"# metric {key}: {value}")
    for e in record.events:
        lines.append(
            f"E {e.product} {e.stage} {e.k} {e.machine} {e.t_start} "
            f"{e.conversion_ticks} {e.processing_ticks}"
        )
    for w in record.maintenance:
        lines.append(f"M {w.machine} {w.start} {w.end} {w.kind}")
    for n, r in enumerate(record.leader_rewards, start=1):
        lines.append(f"R {n} {r}")
    for o, rewards in sorted(record.op_rewards.items()):
        for n, r in enumerate(rewards, start=1):
            lines.append(f"O {o} {n} {r}")
    for g in record.guard_overrides:
        lines.append(
            f"G {g.tick} {g.machine} {g.operation} {int(g.intent_convert)} "
            f"{g.intent_product} {g.chosen_product} {g.reason}"
        )
    for (p, k), c in sorted(record.completions.items()):
        lines.append(f"C {p} {k} {-1 if c is None else c}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_record(path) -> tuple[SimulationRecord, dict]:
    """Read a trace file back; returns (record, header dict incl. metrics)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"# {TRACE_FORMAT}":
        raise TraceFormatError(f"not a {TRACE_FORMAT} file")
    header: dict[str, str] = {}
    events, maintenance, overrides = [], [], []
    leader: dict[int, int] = {}
    op_rewards: dict[int, dict[int, int]] = {}
    completions: dict[tuple[int, int], int | None] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("# "):
            key, _, value = line[2:].partition(":")
            header[key.strip()] = value.strip()
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "E":
                p, j, k, l, t, co, pr = (int(x) for x in parts[1:])
                events.append(AssignmentEvent(p, j, k, l, t, co, pr))
            elif kind == "M":
                maintenance.append(
                    MaintenanceWindow(int(parts[1]), int(parts[2]), int(parts[3]), parts[4])
                )
            elif kind == "R":
                leader[int(parts[1])] = int(parts[2])
            elif kind == "O":
                op_rewards.setdefault(int(parts[1]), {})[int(parts[2])] = int(parts[3])
            elif kind == "G":
                overrides.append(
                    GuardOverride(
                        int(parts[1]), int(parts[2]), int(parts[3]),
                        bool(int(parts[4])), int(parts[5]), int(parts[6]), parts[7],
                    )
                )
            elif kind == "C":
                c = int(parts[3])
                completions[(int(parts[1]), int(parts[2]))] = None if c < 0 else c
            else:
                raise TraceFormatError(f"unknown record kind {kind!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, TraceFormatError):
                raise
            raise TraceFormatError(f"malformed line {line!r}") from None
    record = SimulationRecord(
        scenario_fingerprint=header.get("scenario_fingerprint", ""),
        tier=header.get("tier", ""),
        episode_seed=int(header.get("episode_seed", 0)),
        breakdown_seed=int(header.get("breakdown_seed", 0)),
        variant=header.get("variant", ""),
        events=tuple(events),
        maintenance=tuple(maintenance),
        completions=completions,
        leader_rewards=tuple(r for _, r in sorted(leader.items())),
        op_rewards={o: tuple(r for _, r in sorted(d.items())) for o, d in op_rewards.items()},
        guard_overrides=tuple(overrides),
    )
    return record, header
