"""Scenario configuration: factory structure, demand model, episode sampling.

A scenario describes the static factory (products, operation routes, machines,
processing and conversion times, shift structure, maintenance and breakdown
models) plus a demand model. An episode instance is one concrete realization:
demanded lots with due times, initial machine setups, initial WIP and the seed
for the breakdown realization. All sampling is driven by explicit integer
seeds through numpy Generators; the same arguments always produce the same
instance, byte for byte after serialization.

File formats are JSON, documented key by key in docs/scenario_format.md.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

SCENARIO_FORMAT = "fabsched-scenario-v1"
EPISODE_FORMAT = "fabsched-episode-v1"

TIERS = ("low", "medium", "high")


class ScenarioError(ValueError):
    """Raised when a scenario or episode violates a structural invariant."""


class InfeasibleShapeError(ScenarioError):
    """Raised when a requested generation shape cannot be satisfied."""


@dataclass(frozen=True)
class ScenarioShape:
    """Size targets for scenario generation.

    out_degree is the target mean out-degree of the operation precedence
    graph (unique consecutive route pairs / number of operations). The
    generator must land within +-0.15 of it.
    """

    n_products: int
    n_operations: int
    n_machines: int
    out_degree: float
    n_shifts: int = 4


@dataclass(frozen=True)
class ProductSpec:
    """One product: its operation route and per-stage parameters.

    route entries are operation ids; a repeated id is a re-entry and counts
    as a distinct stage. units is the inclusive (lo, hi) range for the lot
    unit count. stage_processing[j] is the per-unit processing time in ticks
    at stage j. stage_machines[j] is the list of machines able to run stage j.
    """

    id: str
    route: tuple[str, ...]
    units: tuple[int, int]
    stage_processing: tuple[int, ...]
    stage_machines: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class BreakdownModel:
    """Random machine failures: exponential inter-failure, uniform repair."""

    mtbf_ticks: dict[str, float]
    repair_range: tuple[int, int]


@dataclass(frozen=True)
class DemandModel:
    """Poisson lot counts per product per shift, scaled by tier multiplier."""

    rates: dict[str, float]
    tier_multipliers: dict[str, float]
    initial_wip_rate: float = 0.5


@dataclass
class ScenarioConfig:
    """Static factory description plus demand model.

    Derived index tables (products/operations/machines by integer index,
    per-operation product and machine lists, conversion lookup) are built on
    construction and are not serialized.
    """

    name: str
    shift_ticks: int
    n_shifts: int
    conversion_budget: int
    operations: tuple[str, ...]
    machines: tuple[str, ...]
    products: tuple[ProductSpec, ...]
    conversion: dict[tuple[str, str, str, str], int]
    scheduled_maintenance: tuple[tuple[str, int, int], ...]
    breakdown: BreakdownModel
    demand: DemandModel
    count_cap: int = 20
    demand_window_shifts: int = 4

    # derived, filled by _build_index
    op_index: dict[str, int] = field(default_factory=dict, repr=False)
    machine_index: dict[str, int] = field(default_factory=dict, repr=False)
    product_index: dict[str, int] = field(default_factory=dict, repr=False)
    routes_idx: list[list[int]] = field(default_factory=list, repr=False)
    pr: list[list[int]] = field(default_factory=list, repr=False)
    compat: list[list[frozenset[int]]] = field(default_factory=list, repr=False)
    co_idx: dict[tuple[int, int, int, int], int] = field(default_factory=dict, repr=False)
    op_products: list[list[int]] = field(default_factory=list, repr=False)
    op_stages: list[list[tuple[int, int]]] = field(default_factory=list, repr=False)
    op_machines: list[list[int]] = field(default_factory=list, repr=False)
    machine_setups: list[list[tuple[int, int]]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._build_index()
        self.validate()

    @property
    def total_ticks(self) -> int:
        return self.n_shifts * self.shift_ticks

    def _build_index(self):
        self.op_index = {o: i for i, o in enumerate(self.operations)}
        self.machine_index = {m: i for i, m in enumerate(self.machines)}
        self.product_index = {p.id: i for i, p in enumerate(self.products)}
        if len(self.op_index) != len(self.operations):
            raise ScenarioError("duplicate operation ids")
        if len(self.machine_index) != len(self.machines):
            raise ScenarioError("duplicate machine ids")
        if len(self.product_index) != len(self.products):
            raise ScenarioError("duplicate product ids")

        self.routes_idx = []
        self.pr = []
        self.compat = []
        for spec in self.products:
            try:
                self.routes_idx.append([self.op_index[o] for o in spec.route])
            except KeyError as exc:
                raise ScenarioError(f"product {spec.id}: unknown operation {exc}") from None
            self.pr.append(list(spec.stage_processing))
            stages = []
            for j, ms in enumerate(spec.stage_machines):
                try:
                    stages.append(frozenset(self.machine_index[m] for m in ms))
                except KeyError as exc:
                    raise ScenarioError(
                        f"product {spec.id} stage {j}: unknown machine {exc}"
                    ) from None
            self.compat.append(stages)

        self.co_idx = {}
        for (p0, o0, p1, o1), ticks in self.conversion.items():
            key = (
                self.product_index.get(p0, -1),
                self.op_index.get(o0, -1),
                self.product_index.get(p1, -1),
                self.op_index.get(o1, -1),
            )
            if -1 in key:
                raise ScenarioError(f"conversion entry references unknown id: {(p0, o0, p1, o1)}")
            self.co_idx[key] = ticks

        n_ops = len(self.operations)
        self.op_products = [[] for _ in range(n_ops)]
        self.op_stages = [[] for _ in range(n_ops)]
        for p, route in enumerate(self.routes_idx):
            for j, o in enumerate(route):
                self.op_stages[o].append((p, j))
                if p not in self.op_products[o]:
                    self.op_products[o].append(p)
        for o in range(n_ops):
            self.op_products[o].sort()
        self.op_machines = [
            sorted(set().union(*(self.compat[p][j] for p, j in self.op_stages[o])))
            if self.op_stages[o]
            else []
            for o in range(n_ops)
        ]
        self.machine_setups = [[] for _ in self.machines]
        for p, route in enumerate(self.routes_idx):
            for j, o in enumerate(route):
                for l in self.compat[p][j]:
                    if (p, o) not in self.machine_setups[l]:
                        self.machine_setups[l].append((p, o))
        for l in range(len(self.machines)):
            self.machine_setups[l].sort()

    def validate(self):
        """Check structural invariants; raises ScenarioError naming the first violation."""
        if self.shift_ticks < 1:
            raise ScenarioError("shift_ticks must be >= 1")
        if self.n_shifts < 1:
            raise ScenarioError("n_shifts must be >= 1")
        if self.conversion_budget < 0:
            raise ScenarioError("conversion_budget must be >= 0")
        if self.count_cap < 1 or self.demand_window_shifts < 1:
            raise ScenarioError("count_cap and demand_window_shifts must be >= 1")
        if not self.products:
            raise ScenarioError("at least one product required")
        if not self.operations:
            raise ScenarioError("at least one operation required")
        if not self.machines:
            raise ScenarioError("at least one machine required")

        for p, spec in enumerate(self.products):
            route = self.routes_idx[p]
            if not route:
                raise ScenarioError(f"product {spec.id}: empty route")
            if not (len(spec.stage_processing) == len(spec.stage_machines) == len(route)):
                raise ScenarioError(f"product {spec.id}: per-stage lists must match route length")
            if spec.units[0] < 1 or spec.units[1] < spec.units[0]:
                raise ScenarioError(f"product {spec.id}: bad unit range {spec.units}")
            per_op: dict[int, frozenset[int]] = {}
            for j, o in enumerate(route):
                if self.pr[p][j] < 1:
                    raise ScenarioError(f"product {spec.id} stage {j}: processing time must be >= 1")
                if not self.compat[p][j]:
                    raise ScenarioError(
                        f"product {spec.id} stage {j} ({spec.route[j]}): empty compatible machine set"
                    )
                # re-entrant stages of one (product, operation) must share one
                # machine set, otherwise FIFO service of the shared queue can
                # strand an incompatible queue head
                if o in per_op and per_op[o] != self.compat[p][j]:
                    raise ScenarioError(
                        f"product {spec.id}: re-entrant stages of {spec.route[j]} differ in machines"
                    )
                per_op[o] = self.compat[p][j]

        setups = self.valid_setups()
        for a in setups:
            for b in setups:
                if a == b:
                    if self.co_idx.get((*a, *b), 0) != 0:
                        raise ScenarioError(f"conversion for identical setup {a} must be 0")
                elif (*a, *b) not in self.co_idx:
                    p0, o0 = a
                    p1, o1 = b
                    raise ScenarioError(
                        "missing conversion entry "
                        f"({self.products[p0].id},{self.operations[o0]})->"
                        f"({self.products[p1].id},{self.operations[o1]})"
                    )
        for key, ticks in self.co_idx.items():
            if ticks < 0:
                raise ScenarioError(f"negative conversion time at {key}")

        for m, start, end in self.scheduled_maintenance:
            if m not in self.machine_index:
                raise ScenarioError(f"maintenance references unknown machine {m}")
            if not (0 <= start < end <= self.total_ticks):
                raise ScenarioError(f"maintenance window ({m},{start},{end}) outside horizon")

        for l, setups_l in enumerate(self.machine_setups):
            if not setups_l:
                raise ScenarioError(f"machine {self.machines[l]} is compatible with no stage")

        for pid in self.demand.rates:
            if pid not in self.product_index:
                raise ScenarioError(f"demand rate for unknown product {pid}")
        for spec in self.products:
            if spec.id not in self.demand.rates:
                raise ScenarioError(f"missing demand rate for product {spec.id}")
            if self.demand.rates[spec.id] < 0:
                raise ScenarioError(f"negative demand rate for {spec.id}")
        for tier in TIERS:
            if tier not in self.demand.tier_multipliers:
                raise ScenarioError(f"missing tier multiplier {tier}")
            if self.demand.tier_multipliers[tier] <= 0:
                raise ScenarioError(f"tier multiplier {tier} must be > 0")
        for mid in self.machines:
            if self.breakdown.mtbf_ticks.get(mid, 0.0) <= 0:
                raise ScenarioError(f"machine {mid} needs a positive mean time between failures")
        lo, hi = self.breakdown.repair_range
        if not (1 <= lo <= hi):
            raise ScenarioError("repair_range must satisfy 1 <= lo <= hi")

    def valid_setups(self) -> list[tuple[int, int]]:
        """All (product, operation) pairs a machine setup can take, sorted."""
        out = set()
        for p, route in enumerate(self.routes_idx):
            for o in route:
                out.add((p, o))
        return sorted(out)

    def co(self, p0: int, o0: int, p1: int, o1: int) -> int:
        """Conversion ticks between setups; 0 for an identical (product, operation) pair."""
        if p0 == p1 and o0 == o1:
            return 0
        return self.co_idx[(p0, o0, p1, o1)]

    def operation_graph_out_degree(self) -> float:
        """Mean out-degree of the operation precedence graph (unique route arcs / operations)."""
        edges = set()
        for route in self.routes_idx:
            for a, b in zip(route, route[1:]):
                edges.add((a, b))
        return len(edges) / len(self.operations)

    def to_dict(self) -> dict:
        return {
            "format": SCENARIO_FORMAT,
            "name": self.name,
            "shift_ticks": self.shift_ticks,
            "n_shifts": self.n_shifts,
            "conversion_budget": self.conversion_budget,
            "count_cap": self.count_cap,
            "demand_window_shifts": self.demand_window_shifts,
            "operations": list(self.operations),
            "machines": list(self.machines),
            "products": [
                {
                    "id": p.id,
                    "route": list(p.route),
                    "units": list(p.units),
                    "stage_processing": list(p.stage_processing),
                    "stage_machines": [list(ms) for ms in p.stage_machines],
                }
                for p in self.products
            ],
            "conversion": [
                [p0, o0, p1, o1, ticks]
                for (p0, o0, p1, o1), ticks in sorted(self.conversion.items())
            ],
            "scheduled_maintenance": [list(w) for w in self.scheduled_maintenance],
            "breakdown": {
                "mtbf_ticks": {m: self.breakdown.mtbf_ticks[m] for m in self.machines},
                "repair_range": list(self.breakdown.repair_range),
            },
            "demand": {
                "rates": {p.id: self.demand.rates[p.id] for p in self.products},
                "tier_multipliers": dict(sorted(self.demand.tier_multipliers.items())),
                "initial_wip_rate": self.demand.initial_wip_rate,
            },
        }

    def fingerprint(self) -> str:
        """Hash of the structural core: identifies the factory a policy was trained for.

        Horizon length, maintenance schedule and the name are excluded so a
        checkpoint trained on a short-window view of a scenario loads for
        rolling inference on the full-horizon variant.
        """
        d = self.to_dict()
        for drop in ("name", "n_shifts", "scheduled_maintenance"):
            d.pop(drop)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_horizon(self, n_shifts: int) -> "ScenarioConfig":
        """Copy with a different shift count; maintenance windows cropped to fit."""
        total = n_shifts * self.shift_ticks
        windows = tuple(
            (m, s, min(e, total)) for m, s, e in self.scheduled_maintenance if s < total
        )
        d = self.to_dict()
        d["n_shifts"] = n_shifts
        d["scheduled_maintenance"] = [list(w) for w in windows]
        return _config_from_dict(d)


@dataclass(frozen=True)
class Lot:
    """One lot: product, per-product index k, unit count, due tick and entry stage.

    Demand lots have start_stage 0; initial WIP can enter mid-route. k is
    unique within a product across WIP and demand.
    """

    product: int
    k: int
    units: int
    due: int
    start_stage: int = 0


@dataclass
class EpisodeInstance:
    """One sampled episode: demand lots, initial setups and WIP, breakdown seed."""

    scenario_fingerprint: str
    tier: str
    seed: int
    active_products: tuple[int, ...]
    demand: tuple[Lot, ...]
    initial_wip: tuple[Lot, ...]
    initial_setups: tuple[tuple[int, int], ...]  # per machine (product, operation)
    breakdown_seed: int

    def all_lots(self) -> tuple[Lot, ...]:
        return self.initial_wip + self.demand

    def demand_by_shift(self, config: ScenarioConfig) -> np.ndarray:
        """Lot counts indexed [product, due_shift-1], WIP included."""
        out = np.zeros((len(config.products), config.n_shifts), dtype=np.int64)
        for lot in self.all_lots():
            shift = lot.due // config.shift_ticks - 1
            out[lot.product, shift] += 1
        return out

    def to_dict(self) -> dict:
        def lotd(lot: Lot) -> dict:
            return {
                "product": lot.product,
                "k": lot.k,
                "units": lot.units,
                "due": lot.due,
                "start_stage": lot.start_stage,
            }

        return {
            "format": EPISODE_FORMAT,
            "scenario_fingerprint": self.scenario_fingerprint,
            "tier": self.tier,
            "seed": self.seed,
            "active_products": list(self.active_products),
            "demand": [lotd(l) for l in self.demand],
            "initial_wip": [lotd(l) for l in self.initial_wip],
            "initial_setups": [list(s) for s in self.initial_setups],
            "breakdown_seed": self.breakdown_seed,
        }


def validate_episode(config: ScenarioConfig, episode: EpisodeInstance):
    """Check an episode against its scenario; raises ScenarioError."""
    if episode.scenario_fingerprint != config.fingerprint():
        raise ScenarioError("episode does not belong to this scenario (fingerprint mismatch)")
    if episode.tier not in TIERS:
        raise ScenarioError(f"unknown tier {episode.tier}")
    if len(episode.initial_setups) != len(config.machines):
        raise ScenarioError("initial_setups must cover every machine")
    for l, (p, o) in enumerate(episode.initial_setups):
        if (p, o) not in config.machine_setups[l]:
            raise ScenarioError(
                f"machine {config.machines[l]} initial setup ({p},{o}) is not a setup it can serve"
            )
    seen = set()
    for lot in episode.all_lots():
        if not (0 <= lot.product < len(config.products)):
            raise ScenarioError(f"lot references unknown product {lot.product}")
        route = config.routes_idx[lot.product]
        if not (0 <= lot.start_stage < len(route)):
            raise ScenarioError(f"lot ({lot.product},{lot.k}) start_stage outside route")
        if lot.units < 1:
            raise ScenarioError(f"lot ({lot.product},{lot.k}) has no units")
        if lot.due % config.shift_ticks != 0 or lot.due < config.shift_ticks:
            raise ScenarioError(f"lot ({lot.product},{lot.k}) due {lot.due} not on a shift boundary")
        if (lot.product, lot.k) in seen:
            raise ScenarioError(f"duplicate lot id ({lot.product},{lot.k})")
        seen.add((lot.product, lot.k))


def sample_episode(
    config: ScenarioConfig,
    tier: str,
    seed: int,
    product_dropout: float = 0.0,
) -> EpisodeInstance:
    """Draw one episode instance. Deterministic in (config, tier, seed, product_dropout).

    Per-shift lot counts are Poisson(rate * tier multiplier) per product. Due
    times sit on the shift-end tick. product_dropout removes each product from
    the episode's target set independently (floor of one product); intended
    for training-time variation, evaluation uses 0.
    """
    if tier not in TIERS:
        raise ScenarioError(f"unknown tier {tier}; expected one of {TIERS}")
    rng = np.random.default_rng(np.random.SeedSequence([TIERS.index(tier), seed & 0xFFFFFFFFFFFFFFFF]))
    n_products = len(config.products)

    active = list(range(n_products))
    if product_dropout > 0.0:
        keep = rng.random(n_products) >= product_dropout
        active = [p for p in range(n_products) if keep[p]]
        if not active:
            active = [int(rng.integers(n_products))]

    mult = config.demand.tier_multipliers[tier]
    demand: list[Lot] = []
    wip: list[Lot] = []
    next_k = {}
    for p in active:
        spec = config.products[p]
        n_wip = rng.poisson(config.demand.initial_wip_rate)
        k = 1
        for _ in range(n_wip):
            units = int(rng.integers(spec.units[0], spec.units[1] + 1))
            stage = int(rng.integers(len(spec.route)))
            wip.append(Lot(p, k, units, config.shift_ticks, stage))
            k += 1
        next_k[p] = k
    for p in active:
        spec = config.products[p]
        rate = config.demand.rates[spec.id] * mult
        k = next_k[p]
        for shift in range(1, config.n_shifts + 1):
            count = rng.poisson(rate)
            for _ in range(count):
                units = int(rng.integers(spec.units[0], spec.units[1] + 1))
                demand.append(Lot(p, k, units, shift * config.shift_ticks, 0))
                k += 1

    setups = []
    for l in range(len(config.machines)):
        options = config.machine_setups[l]
        setups.append(options[int(rng.integers(len(options)))])

    return EpisodeInstance(
        scenario_fingerprint=config.fingerprint(),
        tier=tier,
        seed=seed,
        active_products=tuple(active),
        demand=tuple(demand),
        initial_wip=tuple(wip),
        initial_setups=tuple(setups),
        breakdown_seed=int(rng.integers(2**63)),
    )


def _config_from_dict(d: dict) -> ScenarioConfig:
    if d.get("format") != SCENARIO_FORMAT:
        raise ScenarioError(f"unsupported scenario format {d.get('format')!r}")
    try:
        products = tuple(
            ProductSpec(
                id=p["id"],
                route=tuple(p["route"]),
                units=(int(p["units"][0]), int(p["units"][1])),
                stage_processing=tuple(int(x) for x in p["stage_processing"]),
                stage_machines=tuple(tuple(ms) for ms in p["stage_machines"]),
            )
            for p in d["products"]
        )
        conversion = {
            (e[0], e[1], e[2], e[3]): int(e[4]) for e in d.get("conversion", [])
        }
        config = ScenarioConfig(
            name=d.get("name", "unnamed"),
            shift_ticks=int(d["shift_ticks"]),
            n_shifts=int(d["n_shifts"]),
            conversion_budget=int(d["conversion_budget"]),
            count_cap=int(d.get("count_cap", 20)),
            demand_window_shifts=int(d.get("demand_window_shifts", 4)),
            operations=tuple(d["operations"]),
            machines=tuple(d["machines"]),
            products=products,
            conversion=conversion,
            scheduled_maintenance=tuple(
                (w[0], int(w[1]), int(w[2])) for w in d.get("scheduled_maintenance", [])
            ),
            breakdown=BreakdownModel(
                mtbf_ticks={m: float(v) for m, v in d["breakdown"]["mtbf_ticks"].items()},
                repair_range=(
                    int(d["breakdown"]["repair_range"][0]),
                    int(d["breakdown"]["repair_range"][1]),
                ),
            ),
            demand=DemandModel(
                rates={p: float(v) for p, v in d["demand"]["rates"].items()},
                tier_multipliers={t: float(v) for t, v in d["demand"]["tier_multipliers"].items()},
                initial_wip_rate=float(d["demand"].get("initial_wip_rate", 0.5)),
            ),
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise ScenarioError(f"malformed scenario file: {exc!r}") from None
    return config


def load_scenario(path) -> ScenarioConfig:
    """Load and validate a scenario file; raises ScenarioError naming the violation."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"not valid JSON: {exc}") from None
    return _config_from_dict(d)


def save_scenario(config: ScenarioConfig, path) -> bytes:
    """Write a scenario file; returns the bytes written (deterministic)."""
    blob = (json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n").encode()
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def load_episode(path, config: ScenarioConfig) -> EpisodeInstance:
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("format") != EPISODE_FORMAT:
        raise ScenarioError(f"unsupported episode format {d.get('format')!r}")
    episode = EpisodeInstance(
        scenario_fingerprint=d["scenario_fingerprint"],
        tier=d["tier"],
        seed=int(d["seed"]),
        active_products=tuple(int(p) for p in d["active_products"]),
        demand=tuple(Lot(**{k: int(v) for k, v in l.items()}) for l in d["demand"]),
        initial_wip=tuple(Lot(**{k: int(v) for k, v in l.items()}) for l in d["initial_wip"]),
        initial_setups=tuple((int(s[0]), int(s[1])) for s in d["initial_setups"]),
        breakdown_seed=int(d["breakdown_seed"]),
    )
    validate_episode(config, episode)
    return episode


def save_episode(episode: EpisodeInstance, path) -> bytes:
    blob = (json.dumps(episode.to_dict(), indent=1, sort_keys=True) + "\n").encode()
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def generate_scenario(shape: ScenarioShape, seed: int) -> ScenarioConfig:
    """Generate a valid scenario matching the shape. Deterministic in (shape, seed).

    Routes are strictly increasing operation index sequences, so the
    operation precedence graph is acyclic by construction. A repair loop
    nudges routes until the mean out-degree lands within +-0.15 of the
    target, else raises InfeasibleShapeError.
    """
    if shape.n_products < 1 or shape.n_operations < 1 or shape.n_machines < 1:
        raise InfeasibleShapeError("counts must all be >= 1")
    if shape.n_shifts < 1:
        raise InfeasibleShapeError("n_shifts must be >= 1")
    max_edges = shape.n_operations * (shape.n_operations - 1) // 2
    if shape.out_degree < 0 or shape.out_degree > max_edges / shape.n_operations:
        raise InfeasibleShapeError(
            f"out-degree target {shape.out_degree} unreachable with {shape.n_operations} operations"
        )

    rng = np.random.default_rng(np.random.SeedSequence([shape.n_products, shape.n_operations,
                                                        shape.n_machines, seed & 0xFFFFFFFFFFFFFFFF]))
    n_ops = shape.n_operations
    ops = [f"O{i}" for i in range(n_ops)]
    machines = [f"M{i}" for i in range(shape.n_machines)]
    pids = [f"P{i}" for i in range(shape.n_products)]

    def draw_route(include: int | None = None) -> list[int]:
        if n_ops == 1:
            return [0]
        length = int(rng.integers(2, min(n_ops, 4) + 1))
        picked = set(rng.choice(n_ops, size=length, replace=False).tolist())
        if include is not None and include not in picked:
            picked.discard(sorted(picked)[int(rng.integers(len(picked)))])
            picked.add(include)
        return sorted(picked)

    routes = [draw_route() for _ in range(shape.n_products)]

    def mean_out(rs) -> float:
        edges = {(a, b) for r in rs for a, b in zip(r, r[1:])}
        return len(edges) / n_ops

    # mutate routes until every operation is routed and the mean out-degree
    # is on target
    tol = 0.15
    for _ in range(4000):
        uncovered = sorted(set(range(n_ops)) - {o for r in routes for o in r})
        d = mean_out(routes)
        if not uncovered and abs(d - shape.out_degree) <= tol:
            break
        i = int(rng.integers(len(routes)))
        if uncovered:
            routes[i] = draw_route(include=uncovered[int(rng.integers(len(uncovered)))])
        elif d < shape.out_degree:
            routes[i] = draw_route()
        else:
            # reuse another product's route to shed unique arcs
            j = int(rng.integers(len(routes)))
            routes[i] = list(routes[j])
    else:
        raise InfeasibleShapeError(
            f"could not reach out-degree {shape.out_degree} +-{tol} with full operation coverage"
        )

    # every operation gets a machine pool by round robin; some machines also
    # serve a second operation so pools overlap
    pools: list[list[int]] = [[] for _ in range(n_ops)]
    for l in range(shape.n_machines):
        pools[l % n_ops].append(l)
    for l in range(shape.n_machines):
        if rng.random() < 0.25 and n_ops > 1:
            other = int(rng.integers(n_ops))
            if l not in pools[other]:
                pools[other].append(l)
    for o in range(n_ops):
        if not pools[o]:
            pools[o].append(int(rng.integers(shape.n_machines)))
    pools = [sorted(pool) for pool in pools]

    products = []
    for p, pid in enumerate(pids):
        route = routes[p]
        lo = int(rng.integers(1, 3))
        hi = lo + int(rng.integers(0, 2))
        stage_pr = [int(rng.integers(1, 3)) for _ in route]
        stage_machines = []
        for o in route:
            pool = pools[o]
            pick = [m for m in pool if rng.random() < 0.8]
            if not pick:
                pick = [pool[int(rng.integers(len(pool)))]]
            stage_machines.append(tuple(machines[m] for m in pick))
        products.append(
            ProductSpec(
                id=pid,
                route=tuple(ops[o] for o in route),
                units=(lo, hi),
                stage_processing=tuple(stage_pr),
                stage_machines=tuple(stage_machines),
            )
        )

    # give every machine at least one compatible stage
    used_by = [False] * shape.n_machines
    for spec in products:
        for ms in spec.stage_machines:
            for m in ms:
                used_by[int(m[1:])] = True
    for l in range(shape.n_machines):
        if used_by[l]:
            continue
        target = None
        for o in range(n_ops):
            if l in pools[o]:
                for p, route in enumerate(routes):
                    if o in route:
                        target = (p, route.index(o))
                        break
            if target:
                break
        if target is None:
            target = (l % shape.n_products, 0)
        p, j = target
        spec = products[p]
        stage_machines = list(spec.stage_machines)
        stage_machines[j] = tuple(sorted(set(stage_machines[j]) | {machines[l]}))
        products[p] = ProductSpec(
            id=spec.id,
            route=spec.route,
            units=spec.units,
            stage_processing=spec.stage_processing,
            stage_machines=tuple(stage_machines),
        )

    # conversion table over all ordered pairs of distinct valid setups;
    # same product cheap, same family moderate, across families expensive
    family = {pid: i * 3 // max(1, shape.n_products) for i, pid in enumerate(pids)}
    setups = sorted({(spec.id, o) for spec in products for o in spec.route})
    conversion = {}
    for p0, o0 in setups:
        for p1, o1 in setups:
            if (p0, o0) == (p1, o1):
                continue
            if p0 == p1:
                ticks = int(rng.integers(1, 3))
            elif family[p0] == family[p1]:
                ticks = int(rng.integers(1, 4))
            else:
                ticks = int(rng.integers(2, 5))
            conversion[(p0, o0, p1, o1)] = ticks

    total = shape.n_shifts * 12
    windows = []
    for l, mid in enumerate(machines):
        if rng.random() < 0.3:
            start = int(rng.integers(0, max(1, total - 4)))
            end = min(total, start + int(rng.integers(2, 5)))
            windows.append((mid, start, end))

    mtbf = {mid: float(rng.uniform(3 * 12, 8 * 12)) for mid in machines}
    rates = {pid: float(np.round(rng.uniform(0.3, 1.2), 3)) for pid in pids}

    return ScenarioConfig(
        name=f"gen-p{shape.n_products}-o{shape.n_operations}-m{shape.n_machines}-s{seed}",
        shift_ticks=12,
        n_shifts=shape.n_shifts,
        conversion_budget=6,
        operations=tuple(ops),
        machines=tuple(machines),
        products=tuple(products),
        conversion=conversion,
        scheduled_maintenance=tuple(windows),
        breakdown=BreakdownModel(mtbf_ticks=mtbf, repair_range=(2, 4)),
        demand=DemandModel(
            rates=rates,
            tier_multipliers={"low": 1.0, "medium": 3.0, "high": 5.0},
            initial_wip_rate=0.5,
        ),
    )
