"""Command-line front end.

Verbs: generate, train, evaluate, benchmark, ablate, validate, replay.
Global flags (--seed, --scenario, --tier, --outdir) are accepted by every
verb. Exit codes: 0 success, 1 validation failure, 2 configuration error.
Every output artifact echoes the seeds that produced it in its header.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np
import torch

from .agents import CheckpointError
from .baselines import VARIANTS, build_variant
from .factory import (
    TraceFormatError,
    read_record,
    validate_trace,
    write_record,
)
from .learner import (
    CollectController,
    TrainConfig,
    team_from_checkpoint,
    train,
    write_curve,
)
from .metrics import (
    SIGN_CONVENTION,
    compute_metrics,
    evaluation_episode_seed,
    run_benchmark,
)
from .scenario import (
    TIERS,
    ScenarioError,
    ScenarioShape,
    generate_scenario,
    load_scenario,
    sample_episode,
    save_scenario,
)
from .simulator import ShopFloorSim, drive_episode

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2


def _common_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--seed", type=int, default=0, help="master random seed")
    sub.add_argument("--scenario", help="scenario JSON path")
    sub.add_argument("--tier", choices=TIERS, default="medium", help="demand tier")
    sub.add_argument("--outdir", default=".", help="output directory")


def _require_scenario(args):
    if not args.scenario:
        raise ScenarioError("--scenario is required for this command")
    return load_scenario(args.scenario)


def _parse_checkpoints(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        name, sep, path = pair.partition("=")
        if not sep or not name or not path:
            raise ScenarioError(f"--checkpoint expects NAME=PATH, got {pair!r}")
        out[name] = path
    if not out:
        raise ScenarioError("at least one --checkpoint NAME=PATH is required")
    return out


def _load_teams(config, checkpoints: dict[str, str]) -> dict:
    teams = {}
    for name, path in sorted(checkpoints.items()):
        team, _extra = team_from_checkpoint(path, config)
        teams[name] = team
    return teams


def _write_json(path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ commands

def cmd_generate(args) -> int:
    shape = ScenarioShape(
        n_products=args.products,
        n_operations=args.operations,
        n_machines=args.machines,
        out_degree=args.out_degree,
        n_shifts=args.shifts,
    )
    config = generate_scenario(shape, args.seed)
    out = args.out or os.path.join(args.outdir, f"{config.name}.json")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_scenario(config, out)
    print(f"# seed: {args.seed}")
    print(f"scenario: {out}")
    print(f"fingerprint: {config.fingerprint()}")
    print(f"products={len(config.products)} operations={len(config.operations)} "
          f"machines={len(config.machines)} shifts={config.n_shifts}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _require_scenario(args)
    if args.variant not in VARIANTS:
        raise ScenarioError(f"unknown variant {args.variant!r}; "
                            f"choose from {sorted(VARIANTS)}")
    os.makedirs(args.outdir, exist_ok=True)
    ckpt = args.checkpoint or os.path.join(args.outdir, f"{args.variant}.ckpt")
    result = train(
        config, args.variant, args.tier, args.episodes, args.seed,
        cfg=TrainConfig(), workers=args.workers, checkpoint_path=ckpt,
    )
    curve_path = os.path.join(args.outdir, f"curve_{args.variant}.csv")
    write_curve(curve_path, result.curve, header={
        "seed": args.seed, "tier": args.tier, "variant": args.variant,
        "episodes": args.episodes, "scenario_fingerprint": config.fingerprint(),
    })
    _write_json(os.path.join(args.outdir, f"train_{args.variant}.json"), {
        "header": {"seed": args.seed, "tier": args.tier, "variant": args.variant,
                   "episodes": args.episodes,
                   "scenario_fingerprint": config.fingerprint()},
        "best_mean": result.best_mean,
        "best_episode": result.best_episode,
        "checkpoint": ckpt,
        "curve": curve_path,
    })
    print(f"# seed: {args.seed}")
    print(f"trained {args.variant} for {args.episodes} episodes (tier {args.tier})")
    print(f"best moving-average team reward: {result.best_mean:.3f} "
          f"at episode {result.best_episode}")
    print(f"checkpoint: {ckpt}")
    print(f"curve: {curve_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _require_scenario(args)
    team, extra = team_from_checkpoint(args.checkpoint, config)
    os.makedirs(args.outdir, exist_ok=True)
    tier_index = TIERS.index(args.tier)
    per_episode = []
    failures = 0
    for i in range(args.episodes):
        ep_seed = evaluation_episode_seed(args.seed, tier_index, i)
        episode = sample_episode(config, args.tier, ep_seed)
        from .learner import infer_rolling

        record, _info = infer_rolling(config, episode, team,
                                      window_shifts=args.window_shifts,
                                      seed=ep_seed)
        validation = validate_trace(config, episode, record.events, record.maintenance)
        if not validation.ok:
            failures += 1
            print(f"episode {i}: VALIDATION FAILED: {validation.summary()}",
                  file=sys.stderr)
            continue
        report = compute_metrics(config, episode, record, validation)
        row = {"episode": i, "episode_seed": ep_seed, **report.to_dict()}
        per_episode.append(row)
        if args.save_traces:
            trace_path = os.path.join(args.outdir, f"trace_{team.variant_name}_{i}.txt")
            write_record(record, trace_path, metrics=report.to_dict())
    from .metrics import MetricsReport, aggregate

    reports = [MetricsReport(**{k: r[k] for k in MetricsReport.__dataclass_fields__})
               for r in per_episode]
    payload = {
        "header": {"seed": args.seed, "tier": args.tier,
                   "variant": team.variant_name, "episodes": args.episodes,
                   "window_shifts": args.window_shifts,
                   "checkpoint": args.checkpoint,
                   "scenario_fingerprint": config.fingerprint(),
                   "checkpoint_extra": {k: v for k, v in extra.items()
                                        if not isinstance(v, dict)}},
        "per_episode": per_episode,
        "aggregate": aggregate(reports) if reports else {},
    }
    out = os.path.join(args.outdir, f"evaluate_{team.variant_name}.json")
    _write_json(out, payload)
    print(f"# seed: {args.seed}")
    print(f"evaluated {team.variant_name} on {args.episodes} episodes (tier {args.tier})")
    if reports:
        agg = payload["aggregate"]
        print(f"completion_rate: {agg['completion_rate']['mean']:.4f} "
              f"± {agg['completion_rate']['std']:.4f}")
        print(f"tardiness: {agg['tardiness']['mean']:.2f} "
              f"± {agg['tardiness']['std']:.2f}")
    print(f"report: {out}")
    return EXIT_VALIDATION if failures else EXIT_OK


def _benchmark_common(args, baseline: str, out_name: str) -> int:
    config = _require_scenario(args)
    checkpoints = _parse_checkpoints(args.checkpoint)
    teams = _load_teams(config, checkpoints)
    if baseline not in teams:
        raise ScenarioError(f"baseline {baseline!r} needs a checkpoint "
                            f"(have {sorted(teams)})")
    tiers = args.tiers.split(",") if args.tiers else [args.tier]
    for t in tiers:
        if t not in TIERS:
            raise ScenarioError(f"unknown tier {t!r}")
    os.makedirs(args.outdir, exist_ok=True)
    result = run_benchmark(config, teams, tiers, args.episodes, args.seed,
                           window_shifts=args.window_shifts)
    table = result.table(baseline)
    table.header.update({
        "scenario_fingerprint": config.fingerprint(),
        "checkpoints": checkpoints,
    })

    csv_path = os.path.join(args.outdir, f"{out_name}_episodes.csv")
    fields = ["tier", "variant", "episode", "episode_seed", "tardiness",
              "n_conversions", "cumulative_idle", "completion_rate", "delayed",
              "total_lots", "team_reward", "n_overrides"]
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# seed: {args.seed}\n")
        fh.write(f"# episodes: {args.episodes}\n")
        fh.write(f"# scenario_fingerprint: {config.fingerprint()}\n")
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for tier in result.metrics:
            for variant, reports in sorted(result.metrics[tier].items()):
                for i, rep in enumerate(reports):
                    writer.writerow({
                        "tier": tier, "variant": variant, "episode": i,
                        "episode_seed": result.episode_seeds[tier][i],
                        **rep.to_dict(),
                    })

    payload = {
        "header": {"seed": args.seed, "tiers": tiers, "episodes": args.episodes,
                   "baseline": baseline, "sign_convention": SIGN_CONVENTION,
                   "scenario_fingerprint": config.fingerprint(),
                   "checkpoints": checkpoints,
                   "window_shifts": args.window_shifts},
        "summary": result.summary(),
        "table": json.loads(table.to_json()),
        "completion_histogram": result.completion_histogram(),
    }
    json_path = os.path.join(args.outdir, f"{out_name}.json")
    _write_json(json_path, payload)
    table_path = os.path.join(args.outdir, f"{out_name}_table.txt")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(f"# seed: {args.seed}\n")
        fh.write(table.format_text())

    print(f"# seed: {args.seed}")
    print(table.format_text(), end="")
    print(f"report: {json_path}")
    print(f"episodes: {csv_path}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    return _benchmark_common(args, args.baseline, "benchmark")


def cmd_ablate(args) -> int:
    return _benchmark_common(args, "SRM", "ablation")


def cmd_validate(args) -> int:
    config = _require_scenario(args)
    if args.trace:
        record, header = read_record(args.trace)
        episode = sample_episode(config, record.tier, record.episode_seed)
        validation = validate_trace(config, episode, record.events, record.maintenance)
        print(f"# trace: {args.trace}")
        print(validation.summary())
        return EXIT_OK if validation.ok else EXIT_VALIDATION
    torch.manual_seed(args.seed)
    team = build_variant("ORM", config)
    total_violations = 0
    for i in range(args.episodes):
        ep_seed = evaluation_episode_seed(args.seed, TIERS.index(args.tier), i)
        episode = sample_episode(config, args.tier, ep_seed)
        env = ShopFloorSim(config, episode)
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, 17, i]))
        ctrl = CollectController(team, rng, greedy=False, record=False)
        record = drive_episode(env, ctrl)
        validation = validate_trace(config, episode, record.events, record.maintenance)
        if not validation.ok:
            total_violations += 1
            print(f"episode {i} (seed {ep_seed}): {validation.summary()}",
                  file=sys.stderr)
    print(f"# seed: {args.seed}")
    print(f"validated {args.episodes} episodes (tier {args.tier}): "
          f"{args.episodes - total_violations} clean, {total_violations} with violations")
    return EXIT_VALIDATION if total_violations else EXIT_OK


def cmd_replay(args) -> int:
    config = _require_scenario(args)
    record, header = read_record(args.record)
    if record.scenario_fingerprint != config.fingerprint():
        raise ScenarioError(
            "trace was produced for a different scenario "
            f"({record.scenario_fingerprint[:12]} != {config.fingerprint()[:12]})"
        )
    episode = sample_episode(config, record.tier, record.episode_seed)
    if episode.breakdown_seed != record.breakdown_seed:
        print("replay: breakdown seed mismatch — episode cannot be reconstructed",
              file=sys.stderr)
        return EXIT_VALIDATION
    validation = validate_trace(config, episode, record.events, record.maintenance)
    if not validation.ok:
        print(f"replay: {validation.summary()}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        report = compute_metrics(config, episode, record, validation)
    except ValueError as exc:
        print(f"replay: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    mismatches = []
    for key, value in report.to_dict().items():
        stored = header.get(f"metric {key}")
        if stored is None:
            continue
        if isinstance(value, float):
            if abs(float(stored) - value) > 1e-9:
                mismatches.append((key, stored, value))
        elif int(stored) != value:
            mismatches.append((key, stored, value))
    print(f"# trace: {args.record}")
    print(f"# episode_seed: {record.episode_seed}")
    print(validation.summary())
    for key, value in sorted(report.to_dict().items()):
        print(f"{key}: {value}")
    if mismatches:
        for key, stored, value in mismatches:
            print(f"replay mismatch: {key} stored={stored} recomputed={value}",
                  file=sys.stderr)
        return EXIT_VALIDATION
    print("replay: stored metrics match recomputation")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fabsched",
        description="Reproducible factory-scale dynamic job-shop scheduling: "
                    "simulate, train, evaluate, benchmark.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("generate", help="generate a synthetic scenario")
    _common_flags(p)
    p.add_argument("--products", type=int, default=3)
    p.add_argument("--operations", type=int, default=4)
    p.add_argument("--machines", type=int, default=5)
    p.add_argument("--out-degree", type=float, default=1.0)
    p.add_argument("--shifts", type=int, default=6)
    p.add_argument("--out", help="output scenario path")
    p.set_defaults(func=cmd_generate)

    p = subs.add_parser("train", help="train one variant")
    _common_flags(p)
    p.add_argument("--variant", required=True, help=f"one of {sorted(VARIANTS)}")
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--checkpoint", help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("evaluate", help="evaluate a checkpoint on fresh episodes")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--window-shifts", type=int, default=4)
    p.add_argument("--save-traces", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("benchmark", help="paired comparison of variants")
    _common_flags(p)
    p.add_argument("--checkpoint", action="append", metavar="NAME=PATH")
    p.add_argument("--baseline", required=True)
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--tiers", help="comma-separated tier list (default: --tier)")
    p.add_argument("--window-shifts", type=int, default=4)
    p.set_defaults(func=cmd_benchmark)

    p = subs.add_parser("ablate", help="ablation table relative to SRM")
    _common_flags(p)
    p.add_argument("--checkpoint", action="append", metavar="NAME=PATH")
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--tiers", help="comma-separated tier list (default: --tier)")
    p.add_argument("--window-shifts", type=int, default=4)
    p.set_defaults(func=cmd_ablate)

    p = subs.add_parser("validate", help="validate traces against the constraint families")
    _common_flags(p)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--trace", help="validate a stored trace instead of fresh episodes")
    p.set_defaults(func=cmd_validate)

    p = subs.add_parser("replay", help="re-validate a stored trace and recompute metrics")
    _common_flags(p)
    p.add_argument("--record", required=True, help="trace file path")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, CheckpointError, TraceFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
