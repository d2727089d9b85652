"""Observation encoding and policy networks.

Followers: one per operation, a categorical head per managed machine over
2 * n_products outcomes laid out (convert-to-p0, keep|p0, convert-to-p1,
keep|p1, ...). Even categories convert to the product, odd categories keep
the current setup. Unavailable machines are masked: their slices contribute
neither log-probability nor entropy and their sampled entries are -1.

Leader: per shift it emits one goal vector in [0,1]^3 per operation, each
coordinate drawn from a Beta(alpha, beta) with alpha, beta = 1 + softplus of
a network output (both > 1, so the mode used by greedy decoding is unique).

Rule agents: a single categorical over a dispatch-rule set, either one agent
per operation or one global agent over the concatenated observation.

Actor and critic are separate 2-layer, 256-unit ReLU networks. All action
sampling draws from the provided numpy Generator; torch's RNG is touched
only at parameter initialization.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from . import kernels
from .scenario import ScenarioConfig

GOAL_DIM = 3
HIDDEN = 256

CHECKPOINT_FORMAT = "fabsched-checkpoint-v1"


class CheckpointError(RuntimeError):
    """Raised when a checkpoint cannot be loaded for the requested scenario."""


def decode_category(cat: int) -> tuple[bool, int]:
    """Category -> (convert?, product slot index within the operation)."""
    return cat % 2 == 0, cat // 2


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from unnormalized float probabilities via the given stream."""
    p = probs.astype(np.float64)
    c = np.cumsum(p)
    u = rng.random() * c[-1]
    return int(min(np.searchsorted(c, u, side="right"), len(p) - 1))


class Encoder:
    """Builds fixed-layout observation vectors per operation from the simulator state."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.window = config.demand_window_shifts
        self.n_products = len(config.products)
        self.n_ops = len(config.operations)
        self.ops = [o for o in range(self.n_ops) if config.op_products[o]]
        self.machine_feats = self.n_products + self.n_ops + 3
        self.op_dim = {}
        for o in self.ops:
            nm = len(config.op_machines[o])
            npo = len(config.op_products[o])
            self.op_dim[o] = nm * self.machine_feats + npo * (2 + self.window) + GOAL_DIM
        self.global_dim = sum(self.op_dim[o] for o in self.ops)

    def follower_obs(self, env, operation: int, goal: np.ndarray | None = None) -> np.ndarray:
        config = self.config
        machines = config.op_machines[operation]
        products = config.op_products[operation]
        m_pt = env.m_pt[machines]
        m_op = env.m_op[machines]
        busy_until = env.m_busy_until[machines]
        m_busy = (busy_until > env.tick).astype(np.int64)
        m_next = np.maximum(0, busy_until - env.tick)
        m_budget = env.m_budget[machines]

        wip_d = env.wip_counts(operation)
        delayed_d = env.delayed_counts(operation)
        wip = np.array([wip_d[p] for p in products], dtype=np.int64)
        delayed = np.array([delayed_d[p] for p in products], dtype=np.int64)

        fd = np.zeros((len(products), self.window), dtype=np.int64)
        shift0 = env.tick // config.shift_ticks
        for w in range(self.window):
            col = shift0 + w
            if col < config.n_shifts:
                for i, p in enumerate(products):
                    fd[i, w] = env.demand_matrix[p, col]

        if goal is None:
            goal = env.goals.get(operation)
        goal_arr = np.zeros(GOAL_DIM) if goal is None else np.asarray(goal, dtype=np.float64)
        return kernels.assemble_follower_obs(
            m_pt, m_op, m_busy, m_budget, m_next,
            self.n_products, self.n_ops,
            config.conversion_budget, config.shift_ticks,
            wip, delayed, fd, config.count_cap, goal_arr,
        )

    def leader_obs(self, env) -> np.ndarray:
        """Union of all operations' observations with goal slots zeroed."""
        zero = np.zeros(GOAL_DIM)
        return np.concatenate([self.follower_obs(env, o, goal=zero) for o in self.ops])


def _mlp(in_dim: int, out_dim: int, out_gain: float) -> nn.Sequential:
    layers = [nn.Linear(in_dim, HIDDEN), nn.ReLU(), nn.Linear(HIDDEN, HIDDEN), nn.ReLU(),
              nn.Linear(HIDDEN, out_dim)]
    net = nn.Sequential(*layers)
    for i, m in enumerate(net):
        if isinstance(m, nn.Linear):
            gain = out_gain if i == len(layers) - 1 else float(np.sqrt(2.0))
            nn.init.orthogonal_(m.weight, gain=gain)
            nn.init.zeros_(m.bias)
    return net


class FollowerPolicy(nn.Module):
    """Per-machine categorical policy for one operation, plus a state-value critic."""

    kind = "follower"

    def __init__(self, obs_dim: int, n_machines: int, n_products: int):
        super().__init__()
        self.obs_dim = obs_dim
        self.n_machines = n_machines
        self.n_products = n_products
        self.n_cat = 2 * n_products
        self.actor = _mlp(obs_dim, n_machines * self.n_cat, 0.01)
        self.critic = _mlp(obs_dim, 1, 1.0)

    def spec(self) -> dict:
        return {"kind": self.kind, "obs_dim": self.obs_dim,
                "n_machines": self.n_machines, "n_products": self.n_products}

    def logits(self, obs: torch.Tensor) -> torch.Tensor:
        return self.actor(obs).view(-1, self.n_machines, self.n_cat)

    def act(self, obs: np.ndarray, avail: np.ndarray, rng: np.random.Generator,
            greedy: bool = False) -> tuple[np.ndarray, float, float]:
        """Sample (or argmax) one category per available machine.

        Returns (categories with -1 at unavailable machines, joint log-prob
        over available machines, state value).
        """
        with torch.no_grad():
            t_obs = torch.from_numpy(obs).float().unsqueeze(0)
            logp = torch.log_softmax(self.logits(t_obs)[0], dim=-1)
            value = float(self.critic(t_obs)[0, 0])
        cats = np.full(self.n_machines, -1, dtype=np.int64)
        total = 0.0
        probs = torch.exp(logp).numpy()
        for i in range(self.n_machines):
            if not avail[i]:
                continue
            if greedy:
                cat = int(torch.argmax(logp[i]))
            else:
                cat = sample_categorical(probs[i], rng)
            cats[i] = cat
            total += float(logp[i, cat])
        return cats, total, value

    def evaluate(self, obs: torch.Tensor, actions: torch.Tensor,
                 masks: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Batched log-prob, entropy and value; both summed over available machines."""
        logp = torch.log_softmax(self.logits(obs), dim=-1)
        safe = actions.clamp(min=0).unsqueeze(-1)
        taken = torch.gather(logp, 2, safe).squeeze(-1)
        logprob = (taken * masks).sum(dim=1)
        ent = -(logp.exp() * logp).sum(dim=-1)
        entropy = (ent * masks).sum(dim=1)
        value = self.critic(obs).squeeze(-1)
        return logprob, entropy, value


class LeaderPolicy(nn.Module):
    """Per-shift Beta policy over one goal vector in [0,1]^3 per operation."""

    kind = "leader"

    def __init__(self, obs_dim: int, n_ops: int):
        super().__init__()
        self.obs_dim = obs_dim
        self.n_ops = n_ops
        self.actor = _mlp(obs_dim, n_ops * GOAL_DIM * 2, 0.01)
        self.critic = _mlp(obs_dim, 1, 1.0)

    def spec(self) -> dict:
        return {"kind": self.kind, "obs_dim": self.obs_dim, "n_ops": self.n_ops}

    def params(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raw = self.actor(obs).view(-1, self.n_ops, GOAL_DIM, 2)
        alpha = 1.0 + nn.functional.softplus(raw[..., 0])
        beta = 1.0 + nn.functional.softplus(raw[..., 1])
        return alpha, beta

    def act(self, obs: np.ndarray, rng: np.random.Generator,
            greedy: bool = False) -> tuple[np.ndarray, float, float]:
        """Returns (goals [n_ops, 3] in (0,1), joint log-prob, state value)."""
        with torch.no_grad():
            t_obs = torch.from_numpy(obs).float().unsqueeze(0)
            alpha, beta = self.params(t_obs)
            value = float(self.critic(t_obs)[0, 0])
        a = alpha[0].double().numpy()
        b = beta[0].double().numpy()
        if greedy:
            goals = (a - 1.0) / (a + b - 2.0)
        else:
            goals = rng.beta(a, b)
        goals = np.clip(goals, 1e-6, 1.0 - 1e-6)
        with torch.no_grad():
            dist = torch.distributions.Beta(alpha[0], beta[0])
            logprob = float(dist.log_prob(torch.from_numpy(goals).float()).sum())
        return goals, logprob, value

    def evaluate(self, obs: torch.Tensor, actions: torch.Tensor,
                 masks: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        alpha, beta = self.params(obs)
        dist = torch.distributions.Beta(alpha, beta)
        logprob = dist.log_prob(actions.view(-1, self.n_ops, GOAL_DIM)).sum(dim=(1, 2))
        entropy = dist.entropy().sum(dim=(1, 2))
        value = self.critic(obs).squeeze(-1)
        return logprob, entropy, value


class RulePolicy(nn.Module):
    """Categorical policy over a dispatch-rule set."""

    kind = "rule"

    def __init__(self, obs_dim: int, n_rules: int):
        super().__init__()
        self.obs_dim = obs_dim
        self.n_rules = n_rules
        self.actor = _mlp(obs_dim, n_rules, 0.01)
        self.critic = _mlp(obs_dim, 1, 1.0)

    def spec(self) -> dict:
        return {"kind": self.kind, "obs_dim": self.obs_dim, "n_rules": self.n_rules}

    def act(self, obs: np.ndarray, rng: np.random.Generator,
            greedy: bool = False) -> tuple[int, float, float]:
        with torch.no_grad():
            t_obs = torch.from_numpy(obs).float().unsqueeze(0)
            logp = torch.log_softmax(self.actor(t_obs)[0], dim=-1)
            value = float(self.critic(t_obs)[0, 0])
        if greedy:
            rule = int(torch.argmax(logp))
        else:
            rule = sample_categorical(logp.exp().numpy(), rng)
        return rule, float(logp[rule]), value

    def evaluate(self, obs: torch.Tensor, actions: torch.Tensor,
                 masks: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        logp = torch.log_softmax(self.actor(obs), dim=-1)
        logprob = torch.gather(logp, 1, actions.view(-1, 1).clamp(min=0)).squeeze(1)
        entropy = -(logp.exp() * logp).sum(dim=-1)
        value = self.critic(obs).squeeze(-1)
        return logprob, entropy, value


POLICY_KINDS = {
    "follower": FollowerPolicy,
    "leader": LeaderPolicy,
    "rule": RulePolicy,
}


def build_policy(spec: dict) -> nn.Module:
    kind = spec.get("kind")
    if kind not in POLICY_KINDS:
        raise CheckpointError(f"unknown policy kind {kind!r}")
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    return POLICY_KINDS[kind](**kwargs)


def save_checkpoint(path, fingerprint: str, variant: str,
                    policies: dict[str, nn.Module], extra: dict | None = None):
    """Persist a versioned checkpoint bound to a scenario fingerprint."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "fingerprint": fingerprint,
        "variant": variant,
        "specs": {name: p.spec() for name, p in policies.items()},
        "state": {name: p.state_dict() for name, p in policies.items()},
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, fingerprint: str) -> tuple[str, dict[str, nn.Module], dict]:
    """Load a checkpoint; refuses when it was trained for a different scenario."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # noqa: BLE001
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {payload.get('format')!r}")
    if payload["fingerprint"] != fingerprint:
        raise CheckpointError(
            "checkpoint was trained for a different scenario "
            f"(fingerprint {payload['fingerprint'][:12]} != {fingerprint[:12]})"
        )
    policies = {}
    for name, spec in payload["specs"].items():
        policy = build_policy(spec)
        policy.load_state_dict(payload["state"][name])
        policy.eval()
        policies[name] = policy
    return payload["variant"], policies, payload.get("extra", {})
