"""Event-driven shop floor simulator on a discrete tick clock.

One decision point per tick, shift_ticks ticks per shift. Each tick runs:
realize maintenance, leader goals on the first tick of a shift (handled by
the driving controller), follower actions for operations with available
machines, action application, then advance. Advancing processes completions
first and, on a shift boundary, emits shift rewards, so a lot finishing
exactly on its due tick counts as on time.

Assignments are claim-at-start: a conversion only happens bundled with a
head-of-queue lot claim, producing one event covering conversion plus
processing. There is no preemption; scheduled windows and breakdowns whose
start falls inside a running assignment defer until the lot completes.
Within one tick, contention is resolved in ascending (operation, machine)
order; a no-op decision does not consume the machine, so a later operation
may still claim it the same tick.

Shift rewards count each delayed lot exactly once, in the shift its due
tick falls: the negated episode sum of leader rewards equals the number of
delayed lots due within the horizon.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import guard as guard_mod
from .factory import AssignmentEvent, GuardOverride, MaintenanceWindow, SimulationRecord
from .scenario import EpisodeInstance, ScenarioConfig


class ContractViolation(RuntimeError):
    """Raised when a caller hands the simulator an action outside its contract."""


@dataclass(frozen=True)
class QueueEntry:
    arrival: int
    k: int
    stage: int
    units: int
    due: int


@dataclass
class StepOutcome:
    """What one advance produced: new tick, done flag, rewards on boundaries."""

    tick: int
    done: bool
    shift: int | None = None
    leader_reward: int | None = None
    op_rewards: dict[int, int] | None = None


class ShopFloorSim:
    """Simulates one episode of a scenario; deterministic given the episode."""

    def __init__(
        self,
        config: ScenarioConfig,
        episode: EpisodeInstance,
        guard_enabled: bool = False,
        window_shifts: int | None = None,
    ):
        if episode.scenario_fingerprint != config.fingerprint():
            raise ContractViolation("episode belongs to a different scenario")
        self.config = config
        self.episode = episode
        self.guard_enabled = guard_enabled
        self.window_shifts = window_shifts or config.demand_window_shifts
        self.n_machines = len(config.machines)
        self.total_ticks = config.total_ticks
        self.lots = {(l.product, l.k): l for l in episode.all_lots()}
        self.demand_matrix = episode.demand_by_shift(config)
        self.reset()

    # ------------------------------------------------------------------ state

    def reset(self):
        config = self.config
        self.tick = 0
        self.m_pt = np.array([s[0] for s in self.episode.initial_setups], dtype=np.int64)
        self.m_op = np.array([s[1] for s in self.episode.initial_setups], dtype=np.int64)
        self.m_busy_until = np.zeros(self.n_machines, dtype=np.int64)
        self.m_budget = np.zeros(self.n_machines, dtype=np.int64)
        self.m_lot: list[tuple[int, int, int] | None] = [None] * self.n_machines

        self.queues: dict[tuple[int, int], deque[QueueEntry]] = {}
        for o in range(len(config.operations)):
            for p in config.op_products[o]:
                self.queues[(o, p)] = deque()
        for lot in sorted(self.episode.all_lots(), key=lambda l: (l.product, l.k)):
            o = config.routes_idx[lot.product][lot.start_stage]
            self.queues[(o, lot.product)].append(
                QueueEntry(0, lot.k, lot.start_stage, lot.units, lot.due)
            )

        self.stage_completions: dict[tuple[int, int, int], int] = {}
        self.final_completions: dict[tuple[int, int], int] = {}
        self.finished = 0

        # urgency big-number: strictly dominates any reachable required capacity
        self.big_number = 1 + sum(
            sum(config.pr[lot.product][j] * lot.units
                for j in range(lot.start_stage, len(config.routes_idx[lot.product])))
            for lot in self.episode.all_lots()
        )

        # breakdown realization: wall-clock renewal schedule per machine,
        # drawn up front so paired runs across variants share failure inputs
        rng = np.random.default_rng(np.random.SeedSequence([self.episode.breakdown_seed]))
        lo, hi = config.breakdown.repair_range
        self.breakdown_schedule: list[list[tuple[int, int]]] = []
        for l in range(self.n_machines):
            mtbf = config.breakdown.mtbf_ticks[config.machines[l]]
            t, sched = 0, []
            while True:
                t += max(1, int(round(rng.exponential(mtbf))))
                if t >= self.total_ticks:
                    break
                dur = int(rng.integers(lo, hi + 1))
                sched.append((t, dur))
                t += dur
            self.breakdown_schedule.append(sched)
        self.breakdown_ptr = [0] * self.n_machines

        self.events: list[AssignmentEvent] = []
        self.maintenance: list[MaintenanceWindow] = []
        self.overrides: list[GuardOverride] = []
        self.leader_rewards: list[int] = []
        self.op_rewards: dict[int, list[int]] = {
            o: [] for o in range(len(config.operations))
        }
        self.goals: dict[int, np.ndarray] = {}
        self.done = False

    # ------------------------------------------------------------- availability

    def machine_available(self, l: int) -> bool:
        return self.m_busy_until[l] <= self.tick

    def available_machines(self, operation: int) -> list[int]:
        return [l for l in self.config.op_machines[operation] if self.machine_available(l)]

    def available_operations(self) -> list[int]:
        return [
            o
            for o in range(len(self.config.operations))
            if self.config.op_products[o] and self.available_machines(o)
        ]

    def current_shift(self) -> int:
        """1-based shift index of the current tick."""
        return min(self.tick // self.config.shift_ticks + 1, self.config.n_shifts)

    def horizon_end(self) -> int:
        """End tick of the active planning window (rolling, capped at the episode end)."""
        start_shift = self.tick // self.config.shift_ticks
        return min(self.total_ticks, (start_shift + self.window_shifts) * self.config.shift_ticks)

    # ------------------------------------------------------------- maintenance

    def realize_maintenance(self):
        """Apply scheduled windows and due breakdowns to idle machines.

        Busy machines defer: a window or failure whose start passed while a
        lot was running takes effect at the next idle tick. Failures due
        while a machine is already down are subsumed.
        """
        t = self.tick
        for l in range(self.n_machines):
            if self.m_busy_until[l] > t:
                if self.m_lot[l] is None:
                    sched = self.breakdown_schedule[l]
                    while self.breakdown_ptr[l] < len(sched) and sched[self.breakdown_ptr[l]][0] <= t:
                        self.breakdown_ptr[l] += 1
                continue
            mid = self.config.machines[l]
            for m, start, end in self.config.scheduled_maintenance:
                if m == mid and start <= t < end:
                    self.m_busy_until[l] = end
                    self.maintenance.append(MaintenanceWindow(l, t, end, "scheduled"))
                    break
            if self.m_busy_until[l] > t:
                sched = self.breakdown_schedule[l]
                while self.breakdown_ptr[l] < len(sched) and sched[self.breakdown_ptr[l]][0] <= t:
                    self.breakdown_ptr[l] += 1
                continue
            sched = self.breakdown_schedule[l]
            if self.breakdown_ptr[l] < len(sched) and sched[self.breakdown_ptr[l]][0] <= t:
                _, dur = sched[self.breakdown_ptr[l]]
                self.breakdown_ptr[l] += 1
                self.m_busy_until[l] = t + dur
                self.maintenance.append(MaintenanceWindow(l, t, t + dur, "breakdown"))
                while self.breakdown_ptr[l] < len(sched) and sched[self.breakdown_ptr[l]][0] < t + dur:
                    self.breakdown_ptr[l] += 1

    # ------------------------------------------------------------------ queues

    def wip_counts(self, operation: int) -> dict[int, int]:
        return {p: len(self.queues[(operation, p)]) for p in self.config.op_products[operation]}

    def queue_lots(self, operation: int) -> dict[int, list[tuple[int, int]]]:
        return {
            p: [(e.stage, e.units) for e in self.queues[(operation, p)]]
            for p in self.config.op_products[operation]
        }

    def delayed_counts(self, operation: int) -> dict[int, int]:
        """Overdue, not-yet-completed stage visits per product at the operation."""
        t = self.tick
        out = {p: 0 for p in self.config.op_products[operation]}
        for p, j in self.config.op_stages[operation]:
            for lot in self.episode.all_lots():
                if lot.product != p or j < lot.start_stage or lot.due > t:
                    continue
                if (p, j, lot.k) not in self.stage_completions:
                    out[p] += 1
        return out

    def machine_views(self, operation: int) -> tuple[guard_mod.MachineView, ...]:
        return tuple(
            guard_mod.MachineView(
                machine=l,
                product_setup=int(self.m_pt[l]),
                operation_setup=int(self.m_op[l]),
                busy_until=int(self.m_busy_until[l]),
            )
            for l in self.config.op_machines[operation]
        )

    def capacity_view(self, operation: int) -> guard_mod.CapacityView:
        return guard_mod.build_capacity_view(
            self.config,
            operation,
            self.tick,
            self.horizon_end(),
            self.big_number,
            self.queue_lots(operation),
            self.machine_views(operation),
        )

    # ----------------------------------------------------------------- actions

    def apply_actions(self, decisions: dict[int, dict[int, tuple[bool, int]]]):
        """Apply per-machine (convert?, product) intents, guarded if enabled.

        decisions: operation -> {machine -> (convert, product)}. Operations
        and machines are applied in ascending order; slices for machines
        that became busy earlier this tick are ignored. An operation with no
        available machine at all is a contract violation, as is a product
        outside the operation's product set.
        """
        if self.done:
            raise ContractViolation("episode is finished")
        for o in decisions:
            if not self.available_machines(o):
                raise ContractViolation(
                    f"operation {o} received actions but has no available machine"
                )
        config = self.config
        tick_events: list[AssignmentEvent] = []
        for o in sorted(decisions):
            machines = decisions[o]
            for l in sorted(machines):
                if not self.machine_available(l):
                    continue
                ci, p_cand = machines[l]
                if p_cand not in config.op_products[o]:
                    raise ContractViolation(
                        f"product {p_cand} is not processable at operation {o}"
                    )
                decision = self._guarded(o, l, ci, p_cand)
                event = self._start(o, l, decision)
                if event is not None:
                    tick_events.append(event)
        tick_events.sort(key=lambda e: e.machine)
        self.events.extend(tick_events)

    def _guarded(self, o: int, l: int, ci: bool, p_cand: int) -> guard_mod.GuardedDecision:
        if not self.guard_enabled:
            return guard_mod.GuardedDecision(
                convert=ci, product=p_cand if ci else int(self.m_pt[l])
            )
        view = self.capacity_view(o)
        urgency = guard_mod.score_urgency(view)
        machine = guard_mod.MachineView(
            machine=l,
            product_setup=int(self.m_pt[l]),
            operation_setup=int(self.m_op[l]),
            busy_until=int(self.m_busy_until[l]),
        )
        wip = {p: len(self.queues[(o, p)]) > 0 for p in view.products}
        allowed = {p: l in self._op_compat(p, o) for p in view.products}
        decision = guard_mod.decide_conversion(ci, p_cand, machine, wip, view, urgency, allowed)
        if decision.overridden:
            self.overrides.append(
                GuardOverride(
                    tick=self.tick,
                    machine=l,
                    operation=o,
                    intent_convert=ci,
                    intent_product=p_cand,
                    chosen_product=decision.product,
                    reason=decision.reason,
                )
            )
        return decision

    def _op_compat(self, p: int, o: int) -> frozenset[int]:
        for j, oo in enumerate(self.config.routes_idx[p]):
            if oo == o:
                return self.config.compat[p][j]
        return frozenset()

    def _start(self, o: int, l: int, decision: guard_mod.GuardedDecision):
        """Try to start an assignment; returns the event or None for a no-op tick."""
        config = self.config
        t = self.tick
        if decision.convert:
            target_p, target_o = decision.product, o
        else:
            target_p, target_o = int(self.m_pt[l]), int(self.m_op[l])
        queue = self.queues.get((target_o, target_p))
        if not queue:
            return None
        head = queue[0]
        if l not in config.compat[target_p][head.stage]:
            return None
        co = config.co(int(self.m_pt[l]), int(self.m_op[l]), target_p, target_o)
        if co > 0 and self.m_budget[l] + co > config.conversion_budget:
            return None
        queue.popleft()
        proc = config.pr[target_p][head.stage] * head.units
        self.m_pt[l] = target_p
        self.m_op[l] = target_o
        self.m_budget[l] += co
        self.m_busy_until[l] = t + co + proc
        self.m_lot[l] = (target_p, head.stage, head.k)
        return AssignmentEvent(target_p, head.stage, head.k, l, t, co, proc)

    # ----------------------------------------------------------------- advance

    def advance(self) -> StepOutcome:
        """Move the clock one tick; process completions, then boundary rewards."""
        if self.done:
            raise ContractViolation("episode is finished")
        self.tick += 1
        t = self.tick
        config = self.config

        arrivals: list[tuple[int, int, QueueEntry]] = []
        for l in range(self.n_machines):
            if self.m_busy_until[l] == t and self.m_lot[l] is not None:
                p, j, k = self.m_lot[l]
                self.m_lot[l] = None
                self.stage_completions[(p, j, k)] = t
                route = config.routes_idx[p]
                if j + 1 < len(route):
                    lot = self.lots[(p, k)]
                    arrivals.append((p, k, QueueEntry(t, k, j + 1, lot.units, lot.due)))
                else:
                    self.final_completions[(p, k)] = t
                    self.finished += 1
        # queue insertion in (product, k) order keeps same-tick arrivals FIFO-consistent
        for p, k, entry in sorted(arrivals, key=lambda x: (x[0], x[1])):
            o = config.routes_idx[p][entry.stage]
            self.queues[(o, p)].append(entry)

        outcome = StepOutcome(tick=t, done=False)
        if t % config.shift_ticks == 0:
            shift = t // config.shift_ticks
            outcome.shift = shift
            outcome.leader_reward = -self._delayed_due_at(t)
            outcome.op_rewards = {
                o: -self._op_delayed_due_at(o, t) for o in range(len(config.operations))
            }
            self.leader_rewards.append(outcome.leader_reward)
            for o, r in outcome.op_rewards.items():
                self.op_rewards[o].append(r)
            self.m_budget[:] = 0
        if t >= self.total_ticks:
            self.done = True
            outcome.done = True
        return outcome

    def _delayed_due_at(self, due: int) -> int:
        count = 0
        for (p, k), lot in self.lots.items():
            if lot.due != due:
                continue
            c = self.final_completions.get((p, k))
            if c is None or c > due:
                count += 1
        return count

    def _op_delayed_due_at(self, o: int, due: int) -> int:
        count = 0
        for p, j in self.config.op_stages[o]:
            for (pp, k), lot in self.lots.items():
                if pp != p or lot.due != due or j < lot.start_stage:
                    continue
                c = self.stage_completions.get((p, j, k))
                if c is None or c > due:
                    count += 1
        return count

    # ------------------------------------------------------------------ record

    def lot_conservation_holds(self) -> bool:
        queued = sum(len(q) for q in self.queues.values())
        on_machines = sum(1 for x in self.m_lot if x is not None)
        return queued + on_machines + self.finished == len(self.lots)

    def completions_map(self) -> dict[tuple[int, int], int | None]:
        return {key: self.final_completions.get(key) for key in self.lots}

    def finish_record(self, variant: str = "") -> SimulationRecord:
        if not self.done:
            raise ContractViolation("episode still running")
        return SimulationRecord(
            scenario_fingerprint=self.episode.scenario_fingerprint,
            tier=self.episode.tier,
            episode_seed=self.episode.seed,
            breakdown_seed=self.episode.breakdown_seed,
            variant=variant,
            events=tuple(self.events),
            maintenance=tuple(self.maintenance),
            completions=self.completions_map(),
            leader_rewards=tuple(self.leader_rewards),
            op_rewards={o: tuple(r) for o, r in self.op_rewards.items()},
            guard_overrides=tuple(self.overrides),
        )


def drive_episode(env: ShopFloorSim, controller) -> SimulationRecord:
    """Run one episode under a controller; returns the simulation record.

    The controller provides begin_shift(env), act(env, operation) returning
    {machine: (convert, product)} for the operation's available machines,
    shift_end(env, outcome) and episode_end(env). The leader, if any, acts
    inside begin_shift.
    """
    env.reset()
    while not env.done:
        env.realize_maintenance()
        if env.tick % env.config.shift_ticks == 0:
            controller.begin_shift(env)
        decisions = {}
        for o in env.available_operations():
            acts = controller.act(env, o)
            if acts:
                decisions[o] = acts
        env.apply_actions(decisions)
        outcome = env.advance()
        if outcome.shift is not None:
            controller.shift_end(env, outcome)
    controller.episode_end(env)
    return env.finish_record(getattr(controller, "variant_name", ""))
