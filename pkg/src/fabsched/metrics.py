"""Schedule metrics, paired benchmarking, and comparison tables.

Metrics per episode: tardiness (sum over lots of max(0, completion - due),
with unfinished lots charged to the horizon end), number of conversions,
cumulative idle time (ticks a machine is neither processing nor under
maintenance), and completion rate against demand. Metric computation is a
pure function of (record, episode, config) and requires a validated trace.

Benchmarks are paired: within one episode index every variant consumes the
identical episode instance, including the breakdown realization, so
percentage improvements are computed episode by episode.

Sign convention (fixed, recorded in output headers): improvements are
positive when tardiness/conversions/idle decrease and when completion rate
increases relative to the baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import stats

from .factory import SimulationRecord, completion_rate, objective_value, validate_trace
from .learner import infer_rolling
from .scenario import EpisodeInstance, ScenarioConfig, sample_episode

_SEED_MASK = 0xFFFFFFFFFFFFFFFF

COST_METRICS = ("tardiness", "n_conversions", "cumulative_idle")
BENEFIT_METRICS = ("completion_rate",)
TABLE_METRICS = COST_METRICS + BENEFIT_METRICS

SIGN_CONVENTION = (
    "positive % = improvement: decrease for tardiness/n_conversions/"
    "cumulative_idle, increase for completion_rate"
)


@dataclass(frozen=True)
class MetricsReport:
    """Per-episode schedule quality metrics."""

    tardiness: int
    n_conversions: int
    cumulative_idle: int
    completion_rate: float
    delayed: int
    total_lots: int
    team_reward: int
    n_overrides: int

    def to_dict(self) -> dict:
        return asdict(self)


def _union_length(intervals: list[tuple[int, int]], horizon: int) -> int:
    """Total covered ticks of the union of [start, end) intervals, clipped to [0, horizon)."""
    clipped = sorted(
        (max(0, s), min(horizon, e)) for s, e in intervals if min(horizon, e) > max(0, s)
    )
    total = 0
    cur_s, cur_e = None, None
    for s, e in clipped:
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        elif e > cur_e:
            cur_e = e
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def compute_metrics(config: ScenarioConfig, episode: EpisodeInstance,
                    record: SimulationRecord, validation=None) -> MetricsReport:
    """Compute the metric set for one validated episode record.

    If no validation report is passed, the trace is validated here; an
    invalid trace is an error rather than a metric value.
    """
    if validation is None:
        validation = validate_trace(config, episode, record.events, record.maintenance)
    if not validation.ok:
        raise ValueError(f"trace failed validation: {validation.summary()}")

    # the completion table must be derivable from the events it summarizes,
    # otherwise a tampered record could carry a clean trace with false results;
    # a final stage still running at the horizon does not count as completed
    derived: dict[tuple[int, int], int | None] = {
        (lot.product, lot.k): None for lot in episode.all_lots()
    }
    for e in record.events:
        if (e.stage == len(config.routes_idx[e.product]) - 1
                and e.completion <= config.total_ticks):
            derived[(e.product, e.k)] = e.completion
    if derived != dict(record.completions):
        raise ValueError("record completions disagree with the event trace")

    horizon = config.total_ticks
    delayed = objective_value(config, episode, record.completions)
    rate = completion_rate(config, episode, record.completions)

    tardiness = 0
    for lot in episode.all_lots():
        c = record.completions.get((lot.product, lot.k))
        c = horizon if c is None else c
        tardiness += max(0, c - lot.due)

    n_conversions = sum(1 for e in record.events if e.conversion_ticks > 0)

    busy: dict[int, list[tuple[int, int]]] = {l: [] for l in range(len(config.machines))}
    for e in record.events:
        busy[e.machine].append((e.t_start, e.completion))
    for w in record.maintenance:
        busy[w.machine].append((w.start, w.end))
    idle = sum(horizon - _union_length(iv, horizon) for iv in busy.values())

    return MetricsReport(
        tardiness=tardiness,
        n_conversions=n_conversions,
        cumulative_idle=idle,
        completion_rate=rate,
        delayed=delayed,
        total_lots=len(episode.all_lots()),
        team_reward=record.team_reward,
        n_overrides=len(record.guard_overrides),
    )


def aggregate(reports: list[MetricsReport]) -> dict[str, dict[str, float]]:
    """Mean and standard deviation of every metric across episodes."""
    out = {}
    for m in TABLE_METRICS + ("delayed", "team_reward", "n_overrides"):
        vals = np.array([getattr(r, m) for r in reports], dtype=np.float64)
        out[m] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


# --------------------------------------------------------------- comparisons

def improvement_series(base: list[MetricsReport], other: list[MetricsReport],
                       metric: str) -> list[float]:
    """Per-episode percentage improvement of `other` relative to `base`.

    Episodes where the baseline value is 0 but the variant's is not carry no
    defined percentage and are skipped; 0-vs-0 counts as 0% improvement.
    """
    if metric not in TABLE_METRICS:
        raise ValueError(f"unknown comparison metric {metric!r}")
    out = []
    for b, v in zip(base, other):
        bv = float(getattr(b, metric))
        vv = float(getattr(v, metric))
        if bv == 0.0:
            if vv == 0.0:
                out.append(0.0)
            continue
        if metric in COST_METRICS:
            out.append((bv - vv) / bv * 100.0)
        else:
            out.append((vv - bv) / bv * 100.0)
    return out


@dataclass(frozen=True)
class ComparisonRow:
    variant: str
    tier: str
    metric: str
    mean: float
    std: float
    n: int


@dataclass
class ComparisonTable:
    """Percentage improvements relative to one baseline variant."""

    baseline: str
    rows: list[ComparisonRow] = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "baseline": self.baseline,
                "header": self.header,
                "rows": [asdict(r) for r in self.rows],
            },
            indent=1, sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ComparisonTable":
        data = json.loads(text)
        return cls(
            baseline=data["baseline"],
            rows=[ComparisonRow(**r) for r in data["rows"]],
            header=data["header"],
        )

    def format_text(self) -> str:
        lines = [f"# baseline: {self.baseline}"]
        for k in sorted(self.header):
            lines.append(f"# {k}: {self.header[k]}")
        lines.append(f"{'variant':12s} {'tier':8s} {'metric':18s} "
                     f"{'mean%':>10s} {'std':>10s} {'n':>4s}")
        for r in self.rows:
            lines.append(f"{r.variant:12s} {r.tier:8s} {r.metric:18s} "
                         f"{r.mean:10.2f} {r.std:10.2f} {r.n:4d}")
        return "\n".join(lines) + "\n"


def comparison_table(metrics: dict[str, dict[str, list[MetricsReport]]],
                     baseline: str, header: dict | None = None) -> ComparisonTable:
    """Build the paired %-improvement table from per-tier, per-variant metrics.

    metrics is {tier: {variant: [MetricsReport per episode]}}; the baseline
    row is identically 0% by construction.
    """
    table = ComparisonTable(baseline=baseline,
                            header={"sign_convention": SIGN_CONVENTION, **(header or {})})
    for tier in sorted(metrics):
        per_variant = metrics[tier]
        if baseline not in per_variant:
            raise ValueError(f"baseline {baseline!r} missing from tier {tier!r} results")
        base = per_variant[baseline]
        for variant in sorted(per_variant):
            for metric in TABLE_METRICS:
                if variant == baseline:
                    vals = [0.0] * len(base)
                else:
                    vals = improvement_series(base, per_variant[variant], metric)
                arr = np.array(vals, dtype=np.float64)
                table.rows.append(ComparisonRow(
                    variant=variant, tier=tier, metric=metric,
                    mean=float(arr.mean()) if len(arr) else 0.0,
                    std=float(arr.std()) if len(arr) else 0.0,
                    n=len(arr),
                ))
    return table


# ---------------------------------------------------------------- benchmarks

def evaluation_episode_seed(seed: int, tier_index: int, index: int) -> int:
    state = np.random.SeedSequence(
        [seed & _SEED_MASK, tier_index, index]
    ).generate_state(1, np.uint64)
    return int(state[0])


@dataclass
class BenchmarkResult:
    """Paired evaluation outputs across tiers and variants."""

    seed: int
    tiers: tuple[str, ...]
    n_episodes: int
    episode_seeds: dict[str, list[int]] = field(default_factory=dict)
    metrics: dict[str, dict[str, list[MetricsReport]]] = field(default_factory=dict)
    records: dict[str, dict[str, list[SimulationRecord]]] = field(default_factory=dict)

    def table(self, baseline: str) -> ComparisonTable:
        return comparison_table(
            self.metrics, baseline,
            header={"seed": self.seed, "episodes": self.n_episodes},
        )

    def summary(self) -> dict:
        return {
            tier: {variant: aggregate(reports)
                   for variant, reports in sorted(per.items())}
            for tier, per in sorted(self.metrics.items())
        }

    def completion_histogram(self, bins: int = 20) -> dict:
        """Completion-rate histogram data per (tier, variant); edges span [0, 1]."""
        edges = np.linspace(0.0, 1.0, bins + 1)
        out = {"edges": [float(x) for x in edges], "counts": {}}
        for tier, per in sorted(self.metrics.items()):
            out["counts"][tier] = {}
            for variant, reports in sorted(per.items()):
                rates = [r.completion_rate for r in reports]
                counts, _ = np.histogram(rates, bins=edges)
                out["counts"][tier][variant] = [int(c) for c in counts]
        return out


def run_benchmark(config: ScenarioConfig, teams: dict, tiers, n_episodes: int,
                  seed: int, window_shifts: int = 4) -> BenchmarkResult:
    """Evaluate every team on identical per-index episode realizations.

    Each run samples the learned policy with the episode's own seed, so given
    fixed checkpoints the whole benchmark is deterministic in
    (config, tiers, n_episodes, seed).
    """
    tiers = tuple(tiers)
    result = BenchmarkResult(seed=seed, tiers=tiers, n_episodes=n_episodes)
    from .scenario import TIERS

    for tier in tiers:
        tier_index = TIERS.index(tier)
        result.episode_seeds[tier] = []
        result.metrics[tier] = {name: [] for name in teams}
        result.records[tier] = {name: [] for name in teams}
        for i in range(n_episodes):
            ep_seed = evaluation_episode_seed(seed, tier_index, i)
            result.episode_seeds[tier].append(ep_seed)
            episode = sample_episode(config, tier, ep_seed)
            for name in sorted(teams):
                record, _ = infer_rolling(config, episode, teams[name],
                                          window_shifts=window_shifts,
                                          seed=ep_seed)
                validation = validate_trace(config, episode, record.events,
                                            record.maintenance)
                result.metrics[tier][name].append(
                    compute_metrics(config, episode, record, validation)
                )
                result.records[tier][name].append(record)
    return result


def run_ablation(config: ScenarioConfig, teams: dict, tier: str, n_episodes: int,
                 seed: int, window_shifts: int = 4) -> tuple[BenchmarkResult, ComparisonTable]:
    """Ablation harness over the model family; the no-leader shared-reward
    variant is the fixed baseline."""
    if "SRM" not in teams:
        raise ValueError("ablation requires the SRM baseline team")
    result = run_benchmark(config, teams, [tier], n_episodes, seed, window_shifts)
    return result, result.table("SRM")


def sign_test(diffs) -> tuple[int, int, float]:
    """One-sided paired sign test: p-value that positive differences dominate.

    Returns (wins, losses, p). Ties are discarded; with no informative pairs
    the p-value is 1.0.
    """
    wins = int(sum(1 for d in diffs if d > 0))
    losses = int(sum(1 for d in diffs if d < 0))
    if wins + losses == 0:
        return wins, losses, 1.0
    p = stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue
    return wins, losses, float(p)
