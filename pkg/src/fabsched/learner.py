"""Multi-agent PPO training and rolling-horizon inference.

Each agent (every follower, the leader, or a rule selector) keeps its own
buffer, advantage estimate and optimizer; all agents share the collected
episodes. Training runs on a truncated scheduling window (a short-horizon
view of the scenario) with the critic bootstrapping the value of the
truncated tail; inference replans greedily over a rolling window on the
full horizon.

Reward timing: shift rewards are credited to the agent's last decision of
that shift (the leader acts exactly once per shift, so its credit is
unambiguous; a follower that never acted during a shift does not receive
that shift's reward).

Reproducibility: episode content and action sampling derive from
(seed, episode index) only, so results are identical for any worker count.
"""

from __future__ import annotations

import csv
import io
import json
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import multiprocessing as mp

import numpy as np
import torch
from torch import nn

from . import kernels
from .agents import save_checkpoint, load_checkpoint
from .baselines import Team, Transition, build_variant
from .factory import SimulationRecord, objective_value
from .scenario import EpisodeInstance, ScenarioConfig, sample_episode, _config_from_dict
from .simulator import ShopFloorSim, drive_episode

_SEED_MASK = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class TrainConfig:
    """PPO hyperparameters and collection settings."""

    clip: float = 0.2
    lr: float = 1e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    batch_size: int = 256
    update_epochs: int = 4
    update_every: int = 8
    training_shift_horizon: int = 4
    product_dropout: float = 0.2
    max_grad_norm: float = 0.5


@dataclass
class AgentEpisode:
    """One agent's transitions from one episode, in decision order."""

    obs: np.ndarray
    actions: np.ndarray
    masks: np.ndarray | None
    logprobs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    bootstrap: float


@dataclass
class EpisodeData:
    """Everything training needs from one collected episode."""

    index: int
    team_reward: int
    objective: int
    agents: dict[str, AgentEpisode]


class CollectController:
    """Drives a Team through an episode; optionally records transitions.

    Also logs every leader goal emission as (shift, flat goal vector) for
    inspection, independent of whether transitions are recorded.
    """

    def __init__(self, team: Team, rng: np.random.Generator,
                 greedy: bool = False, record: bool = True):
        self.team = team
        self.rng = rng
        self.greedy = greedy
        self.record = record
        self.transitions: dict[str, list[Transition]] = {a: [] for a in team.agent_ids()}
        self.goal_log: list[tuple[int, np.ndarray]] = []
        self.data: EpisodeData | None = None

    @property
    def variant_name(self) -> str:
        return self.team.variant_name

    def begin_shift(self, env):
        trans = self.team.begin_shift(env, self.rng, self.greedy)
        if env.goals:
            flat = np.concatenate([env.goals[o] for o in self.team.encoder.ops])
            self.goal_log.append((env.current_shift(), flat))
        if trans is not None and self.record:
            self.transitions[trans.agent].append(trans)

    def act(self, env, operation: int) -> dict[int, tuple[bool, int]]:
        decisions, trans = self.team.act(env, operation, self.rng, self.greedy)
        if trans is not None and self.record:
            self.transitions[trans.agent].append(trans)
        return decisions

    def shift_end(self, env, outcome):
        if not self.record:
            return
        for agent, lst in self.transitions.items():
            if lst and lst[-1].shift == outcome.shift:
                lst[-1].reward += self.team.reward_for(
                    agent, outcome.leader_reward, outcome.op_rewards
                )

    def episode_end(self, env):
        if not self.record:
            return
        agents: dict[str, AgentEpisode] = {}
        for agent, lst in self.transitions.items():
            if not lst:
                continue
            policy = self.team.policies[agent]
            obs = np.stack([t.obs for t in lst])
            if policy.kind == "follower":
                actions = np.stack([t.action for t in lst]).astype(np.int64)
                masks = np.stack([t.mask for t in lst])
            elif policy.kind == "leader":
                actions = np.stack([t.action for t in lst]).astype(np.float64)
                masks = None
            else:
                actions = np.array([t.action for t in lst], dtype=np.int64)
                masks = None
            final_obs = self.team.bootstrap_obs(agent, env)
            with torch.no_grad():
                bootstrap = float(
                    policy.critic(torch.from_numpy(final_obs).float().unsqueeze(0))[0, 0]
                )
            agents[agent] = AgentEpisode(
                obs=obs,
                actions=actions,
                masks=masks,
                logprobs=np.array([t.logprob for t in lst], dtype=np.float64),
                values=np.array([t.value for t in lst], dtype=np.float64),
                rewards=np.array([t.reward for t in lst], dtype=np.float64),
                bootstrap=bootstrap,
            )
        self.data = EpisodeData(index=-1, team_reward=0, objective=0, agents=agents)


def episode_seeds(base_seed: int, index: int) -> tuple[int, int]:
    """Deterministic (content seed, action seed) for one training episode."""
    state = np.random.SeedSequence([base_seed & _SEED_MASK, index]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def run_training_episode(team: Team, view: ScenarioConfig, tier: str, index: int,
                         base_seed: int, cfg: TrainConfig) -> EpisodeData:
    """Collect one exploratory episode on the training window."""
    content_seed, action_seed = episode_seeds(base_seed, index)
    episode = sample_episode(view, tier, content_seed, product_dropout=cfg.product_dropout)
    env = ShopFloorSim(view, episode, guard_enabled=team.spec.guard)
    rng = np.random.default_rng(np.random.SeedSequence([action_seed]))
    ctrl = CollectController(team, rng, greedy=False, record=True)
    record = drive_episode(env, ctrl)
    data = ctrl.data
    data.index = index
    data.team_reward = record.team_reward
    data.objective = objective_value(view, episode, record.completions)
    return data


# --------------------------------------------------------------- worker pool

_WORKER: dict = {}


def _worker_init(config_json: str, variant: str, state_blob: bytes):
    config = _config_from_dict(json.loads(config_json))
    team = build_variant(variant, config)
    team.load_state(torch.load(io.BytesIO(state_blob), weights_only=True))
    _WORKER["team"] = team
    _WORKER["view"] = config


def _worker_run(args) -> EpisodeData:
    tier, index, base_seed, cfg = args
    return run_training_episode(_WORKER["team"], _WORKER["view"], tier, index, base_seed, cfg)


def collect_rollouts(team: Team, view: ScenarioConfig, tier: str, indices,
                     base_seed: int, cfg: TrainConfig,
                     workers: int = 1) -> list[EpisodeData]:
    """Collect episodes for the given indices; output is worker-count invariant."""
    indices = list(indices)
    if workers <= 1 or len(indices) <= 1:
        return [run_training_episode(team, view, tier, i, base_seed, cfg) for i in indices]
    buf = io.BytesIO()
    torch.save(team.state(), buf)
    ctx = mp.get_context("spawn")
    with ProcessPoolExecutor(
        max_workers=workers, mp_context=ctx,
        initializer=_worker_init,
        initargs=(json.dumps(view.to_dict()), team.spec.name, buf.getvalue()),
    ) as pool:
        out = list(pool.map(_worker_run, [(tier, i, base_seed, cfg) for i in indices]))
    return sorted(out, key=lambda d: d.index)


# ----------------------------------------------------------------------- PPO

def assemble_agent_batch(datas: list[EpisodeData], agent: str,
                         cfg: TrainConfig) -> dict | None:
    """Concatenate an agent's episodes and compute normalized GAE advantages."""
    eps = [d.agents[agent] for d in datas if agent in d.agents]
    if not eps:
        return None
    obs = np.concatenate([e.obs for e in eps])
    actions = np.concatenate([e.actions for e in eps])
    masks = None if eps[0].masks is None else np.concatenate([e.masks for e in eps])
    logprobs = np.concatenate([e.logprobs for e in eps])
    values = np.concatenate([e.values for e in eps])
    rewards = np.concatenate([e.rewards for e in eps])
    next_values = np.concatenate([
        np.concatenate([e.values[1:], [e.bootstrap]]) for e in eps
    ])
    ends = np.concatenate([
        np.concatenate([np.zeros(len(e.values) - 1, dtype=np.uint8), [1]]).astype(np.uint8)
        for e in eps
    ])
    adv = kernels.gae_advantages(rewards, values, next_values, ends,
                                 cfg.gamma, cfg.gae_lambda)
    returns = adv + values
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return {
        "obs": obs, "actions": actions, "masks": masks,
        "logprobs": logprobs, "advantages": adv, "returns": returns,
    }


def ppo_loss(policy: nn.Module, obs: torch.Tensor, actions: torch.Tensor,
             masks: torch.Tensor | None, old_logprobs: torch.Tensor,
             advantages: torch.Tensor, returns: torch.Tensor,
             cfg: TrainConfig) -> tuple[torch.Tensor, dict[str, float]]:
    """Clipped-surrogate PPO loss with value and entropy terms.

    Dtype follows the inputs, so the same code path supports the float64
    gradient checks used in testing.
    """
    logprob, entropy, value = policy.evaluate(obs, actions, masks)
    ratio = torch.exp(logprob - old_logprobs)
    s1 = ratio * advantages
    s2 = torch.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * advantages
    pg_loss = -torch.min(s1, s2).mean()
    v_loss = (value - returns).pow(2).mean()
    ent = entropy.mean()
    total = pg_loss + cfg.value_coef * v_loss - cfg.entropy_coef * ent
    stats = {
        "pg_loss": float(pg_loss.detach()),
        "v_loss": float(v_loss.detach()),
        "entropy": float(ent.detach()),
    }
    return total, stats


def ppo_update(policy: nn.Module, optimizer: torch.optim.Optimizer, batch: dict,
               cfg: TrainConfig, rng: np.random.Generator) -> dict[str, float]:
    """Run the configured epochs of minibatch PPO on one agent's batch."""
    obs = torch.from_numpy(batch["obs"]).float()
    if policy.kind == "leader":
        actions = torch.from_numpy(batch["actions"]).float()
    else:
        actions = torch.from_numpy(batch["actions"])
    masks = None if batch["masks"] is None else torch.from_numpy(batch["masks"]).float()
    old_logprobs = torch.from_numpy(batch["logprobs"]).float()
    advantages = torch.from_numpy(batch["advantages"]).float()
    returns = torch.from_numpy(batch["returns"]).float()

    n = obs.shape[0]
    stats: dict[str, float] = {}
    for _ in range(cfg.update_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(perm[start:start + cfg.batch_size].copy())
            loss, stats = ppo_loss(
                policy, obs[idx], actions[idx],
                None if masks is None else masks[idx],
                old_logprobs[idx], advantages[idx], returns[idx], cfg,
            )
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
            optimizer.step()
    return stats


# -------------------------------------------------------------------- training

@dataclass
class TrainResult:
    variant: str
    curve: list[dict] = field(default_factory=list)
    best_mean: float = float("-inf")
    best_episode: int = -1
    team: Team | None = None
    best_state: dict | None = None


def train(config: ScenarioConfig, variant: str, tier: str, total_episodes: int,
          seed: int, cfg: TrainConfig | None = None, workers: int = 1,
          checkpoint_path=None) -> TrainResult:
    """Train one variant; returns the curve and the best-window policy state.

    The persisted checkpoint holds the policy that produced the highest
    100-episode moving average of team reward (shorter prefix averages are
    used until the window fills).
    """
    cfg = cfg or TrainConfig()
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    view = config.with_horizon(min(config.n_shifts, cfg.training_shift_horizon))
    team = build_variant(variant, view)
    optimizers = {
        a: torch.optim.Adam(team.policies[a].parameters(), lr=cfg.lr)
        for a in team.agent_ids()
    }
    update_rng = np.random.default_rng(
        np.random.SeedSequence([seed & _SEED_MASK, 0x9E3779B9])
    )

    result = TrainResult(variant=variant)
    window: deque[float] = deque(maxlen=100)
    best_state = None
    best_mean = float("-inf")
    best_episode = -1

    done = 0
    while done < total_episodes:
        chunk = min(cfg.update_every, total_episodes - done)
        datas = collect_rollouts(team, view, tier, range(done, done + chunk),
                                 seed, cfg, workers)
        improved = False
        for d in datas:
            window.append(float(d.team_reward))
            mean = float(np.mean(window))
            row = {
                "episode": d.index, "tier": tier,
                "team_reward": d.team_reward, "objective": d.objective,
                "moving_mean": mean,
            }
            for agent in team.agent_ids():
                ep = d.agents.get(agent)
                row[f"reward_{agent}"] = 0.0 if ep is None else float(ep.rewards.sum())
            result.curve.append(row)
            # only full windows compete: short-prefix means are too noisy to
            # pick a checkpoint by
            if len(window) == window.maxlen and mean > best_mean:
                best_mean = mean
                best_episode = d.index
                improved = True
        if improved:
            best_state = team.state()
        for agent in team.agent_ids():
            batch = assemble_agent_batch(datas, agent, cfg)
            if batch is not None:
                ppo_update(team.policies[agent], optimizers[agent], batch,
                           cfg, update_rng)
        done += chunk

    if best_state is None:
        # run shorter than one full window: keep the final policy
        best_state = team.state()
        best_mean = float(np.mean(window)) if window else float("-inf")
        best_episode = total_episodes - 1
    result.best_mean = best_mean
    result.best_episode = best_episode
    result.best_state = best_state
    result.team = team
    if checkpoint_path is not None:
        best_team = build_variant(variant, view)
        best_team.load_state(best_state)
        save_checkpoint(
            checkpoint_path, config.fingerprint(), variant, best_team.policies,
            extra={
                "seed": seed, "tier": tier, "episodes": total_episodes,
                "best_mean": best_mean, "best_episode": best_episode,
                "train_config": asdict(cfg),
            },
        )
    return result


def write_curve(path, curve: list[dict], header: dict | None = None):
    """Write the training curve as CSV; header entries go into leading comments.

    Columns: episode, tier, team reward, objective, moving mean, then one
    reward column per agent.
    """
    base = ["episode", "tier", "team_reward", "objective", "moving_mean"]
    agent_cols = sorted({k for row in curve for k in row if k.startswith("reward_")})
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        writer = csv.DictWriter(fh, fieldnames=base + agent_cols, restval=0.0)
        writer.writeheader()
        for row in curve:
            writer.writerow(row)


# ------------------------------------------------------------------- inference

def team_from_checkpoint(path, config: ScenarioConfig) -> tuple[Team, dict]:
    """Rebuild a Team for this scenario from a checkpoint (fingerprint-checked)."""
    variant, policies, extra = load_checkpoint(path, config.fingerprint())
    team = build_variant(variant, config)
    for name, policy in policies.items():
        if name not in team.policies:
            raise KeyError(f"checkpoint policy {name!r} has no slot in variant {variant}")
        team.policies[name].load_state_dict(policy.state_dict())
        team.policies[name].eval()
    return team, extra


def infer_rolling(config: ScenarioConfig, episode: EpisodeInstance, team: Team,
                  window_shifts: int = 4, greedy: bool = False,
                  seed: int = 0) -> tuple[SimulationRecord, dict]:
    """Run one full-horizon episode with rolling-window replanning.

    By default actions are sampled from the learned policy — the quantity PPO
    optimizes — with a generator derived from `seed`, so the run is
    deterministic given (checkpoint, episode, seed). Greedy mode decodes the
    distribution mode instead; the returned info carries the per-shift goal
    emissions.
    """
    env = ShopFloorSim(config, episode, guard_enabled=team.spec.guard,
                       window_shifts=window_shifts)
    rng = np.random.default_rng(np.random.SeedSequence([seed & _SEED_MASK, 0x51]))
    ctrl = CollectController(team, rng, greedy=greedy, record=False)
    record = drive_episode(env, ctrl)
    return record, {"goals": ctrl.goal_log}
