"""Model variants: the leader-follower models, their ablations, and rule baselines.

Variants share one acting interface (Team) so the learner and the
evaluation harness treat them uniformly:

- SRM: followers only, every follower gets the shared all-products reward
- ORM: followers only, per-operation rewards
- LFSRM: leader plus followers, shared reward
- LFORM: leader plus followers, per-operation rewards
- LFORM-RC: LFORM with the conversion guard enabled (the proposed model)
- DRL-JSSP: one rule-selection agent per operation over {SPT, EDD, FIFO}
- DRL-DFJSS: one global rule-selection agent over {SPT, EDD, LQF}

Rule baselines use the follower observation layout with zeroed goal slots
and operation-wise rewards (the global agent sums them). Dispatch rules are
feasible by construction: a rule only considers products whose queue is
non-empty, whose head the machine can process, and whose conversion fits
the remaining shift budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .agents import (
    Encoder,
    FollowerPolicy,
    LeaderPolicy,
    RulePolicy,
    decode_category,
)
from .scenario import ScenarioConfig


def _rule_candidates(env, operation: int, machine: int):
    """Feasible (product, head lot) pairs a rule may pick for this machine."""
    config = env.config
    pt, po = int(env.m_pt[machine]), int(env.m_op[machine])
    out = []
    for p in config.op_products[operation]:
        queue = env.queues[(operation, p)]
        if not queue:
            continue
        head = queue[0]
        if machine not in config.compat[p][head.stage]:
            continue
        co = config.co(pt, po, p, operation)
        if co > 0 and env.m_budget[machine] + co > config.conversion_budget:
            continue
        out.append((p, head))
    return out


def _spt(env, o, cands):
    return min(cands, key=lambda c: (env.config.pr[c[0]][c[1].stage] * c[1].units, c[0]))


def _edd(env, o, cands):
    return min(cands, key=lambda c: (c[1].due, c[0]))


def _fifo(env, o, cands):
    return min(cands, key=lambda c: (c[1].arrival, c[1].k, c[0]))


def _lqf(env, o, cands):
    return min(cands, key=lambda c: (-len(env.queues[(o, c[0])]), c[0]))


RULES = {"SPT": _spt, "EDD": _edd, "FIFO": _fifo, "LQF": _lqf}


def rule_decision(env, operation: int, rule: str, machine: int) -> tuple[bool, int]:
    """Apply a dispatch rule for one machine; returns a (convert?, product) intent.

    The intent is always feasible: the no-candidate case keeps the current
    setup, and a pick equal to the current (product, operation) setup is a
    plain keep.
    """
    cands = _rule_candidates(env, operation, machine)
    if not cands:
        return False, env.config.op_products[operation][0]
    p, _head = RULES[rule](env, operation, cands)
    if (p, operation) == (int(env.m_pt[machine]), int(env.m_op[machine])):
        return False, p
    return True, p


@dataclass(frozen=True)
class VariantSpec:
    """One model variant: action interface, reward routing, leader and guard flags."""

    name: str
    leader: bool
    reward: str  # "shared" | "opwise"
    guard: bool
    action: str  # "direct" | "rule_per_op" | "rule_global"
    rules: tuple[str, ...] = ()

    def __post_init__(self):
        if self.reward not in ("shared", "opwise"):
            raise ValueError(f"unknown reward mode {self.reward!r}")
        if self.action not in ("direct", "rule_per_op", "rule_global"):
            raise ValueError(f"unknown action kind {self.action!r}")
        if self.guard and self.action != "direct":
            raise ValueError("the conversion guard only applies to direct-action variants")
        if self.leader and self.action != "direct":
            raise ValueError("rule-selection variants have no leader")
        if self.action != "direct" and not self.rules:
            raise ValueError("rule-selection variants need a rule set")
        for r in self.rules:
            if r not in RULES:
                raise ValueError(f"unknown rule {r!r}")


VARIANTS = {
    "SRM": VariantSpec("SRM", leader=False, reward="shared", guard=False, action="direct"),
    "ORM": VariantSpec("ORM", leader=False, reward="opwise", guard=False, action="direct"),
    "LFSRM": VariantSpec("LFSRM", leader=True, reward="shared", guard=False, action="direct"),
    "LFORM": VariantSpec("LFORM", leader=True, reward="opwise", guard=False, action="direct"),
    "LFORM-RC": VariantSpec("LFORM-RC", leader=True, reward="opwise", guard=True, action="direct"),
    "DRL-JSSP": VariantSpec(
        "DRL-JSSP", leader=False, reward="opwise", guard=False,
        action="rule_per_op", rules=("SPT", "EDD", "FIFO"),
    ),
    "DRL-DFJSS": VariantSpec(
        "DRL-DFJSS", leader=False, reward="opwise", guard=False,
        action="rule_global", rules=("SPT", "EDD", "LQF"),
    ),
}


@dataclass
class Transition:
    """One recorded decision of one agent."""

    agent: str
    obs: np.ndarray
    action: np.ndarray | int
    mask: np.ndarray | None
    logprob: float
    value: float
    reward: float = 0.0
    shift: int = 0


@dataclass
class Team:
    """All policies of one variant plus the acting logic shared by all of them."""

    spec: VariantSpec
    config: ScenarioConfig
    encoder: Encoder = field(init=False)
    policies: dict[str, torch.nn.Module] = field(init=False)

    def __post_init__(self):
        self.encoder = Encoder(self.config)
        self.policies = {}
        ops = self.encoder.ops
        if self.spec.action == "direct":
            for o in ops:
                self.policies[f"op{o}"] = FollowerPolicy(
                    self.encoder.op_dim[o],
                    len(self.config.op_machines[o]),
                    len(self.config.op_products[o]),
                )
            if self.spec.leader:
                self.policies["leader"] = LeaderPolicy(self.encoder.global_dim, len(ops))
        elif self.spec.action == "rule_per_op":
            for o in ops:
                self.policies[f"op{o}"] = RulePolicy(self.encoder.op_dim[o], len(self.spec.rules))
        else:
            self.policies["global"] = RulePolicy(self.encoder.global_dim, len(self.spec.rules))
        self._tick_rule: tuple[int, int] | None = None

    @property
    def variant_name(self) -> str:
        return self.spec.name

    def agent_ids(self) -> list[str]:
        return sorted(self.policies)

    def load_state(self, states: dict[str, dict]):
        for name, policy in self.policies.items():
            policy.load_state_dict(states[name])

    def state(self) -> dict[str, dict]:
        return {name: {k: v.clone() for k, v in p.state_dict().items()}
                for name, p in self.policies.items()}

    # ------------------------------------------------------------------ acting

    def begin_shift(self, env, rng: np.random.Generator, greedy: bool) -> Transition | None:
        """Leader goal emission on the first decision point of a shift."""
        self._tick_rule = None
        if not self.spec.leader:
            env.goals = {}
            return None
        obs = self.encoder.leader_obs(env)
        goals, logprob, value = self.policies["leader"].act(obs, rng, greedy)
        env.goals = {o: goals[i] for i, o in enumerate(self.encoder.ops)}
        return Transition(
            agent="leader", obs=obs, action=goals.reshape(-1).copy(), mask=None,
            logprob=logprob, value=value, shift=env.current_shift(),
        )

    def act(self, env, operation: int, rng: np.random.Generator,
            greedy: bool) -> tuple[dict[int, tuple[bool, int]], Transition | None]:
        """Per-machine intents for one operation, plus the recorded transition.

        For the global rule agent, the rule is sampled once per tick (on the
        first operation asked) and reused for the rest of the tick; only that
        first call yields a transition.
        """
        config = self.config
        machines = config.op_machines[operation]
        avail = np.array([env.machine_available(l) for l in machines], dtype=bool)
        products = config.op_products[operation]

        if self.spec.action == "direct":
            obs = self.encoder.follower_obs(env, operation)
            policy = self.policies[f"op{operation}"]
            cats, logprob, value = policy.act(obs, avail, rng, greedy)
            decisions = {}
            for i, l in enumerate(machines):
                if cats[i] < 0:
                    continue
                convert, slot = decode_category(int(cats[i]))
                decisions[l] = (convert, products[slot])
            trans = Transition(
                agent=f"op{operation}", obs=obs, action=cats, mask=avail.astype(np.float64),
                logprob=logprob, value=value, shift=env.current_shift(),
            )
            return decisions, trans

        if self.spec.action == "rule_per_op":
            obs = self.encoder.follower_obs(env, operation, goal=np.zeros(3))
            policy = self.policies[f"op{operation}"]
            rule_idx, logprob, value = policy.act(obs, rng, greedy)
            rule = self.spec.rules[rule_idx]
            decisions = {
                l: rule_decision(env, operation, rule, l)
                for i, l in enumerate(machines) if avail[i]
            }
            trans = Transition(
                agent=f"op{operation}", obs=obs, action=rule_idx, mask=None,
                logprob=logprob, value=value, shift=env.current_shift(),
            )
            return decisions, trans

        # rule_global: one rule per tick for every operation
        trans = None
        if self._tick_rule is None or self._tick_rule[0] != env.tick:
            obs = self.encoder.leader_obs(env)
            rule_idx, logprob, value = self.policies["global"].act(obs, rng, greedy)
            self._tick_rule = (env.tick, rule_idx)
            trans = Transition(
                agent="global", obs=obs, action=rule_idx, mask=None,
                logprob=logprob, value=value, shift=env.current_shift(),
            )
        rule = self.spec.rules[self._tick_rule[1]]
        decisions = {
            l: rule_decision(env, operation, rule, l)
            for i, l in enumerate(machines) if avail[i]
        }
        return decisions, trans

    def reward_for(self, agent: str, leader_reward: int, op_rewards: dict[int, int]) -> int:
        """Route a shift reward to one agent according to the variant."""
        if agent == "leader":
            return leader_reward
        if agent == "global":
            return sum(op_rewards[o] for o in self.encoder.ops)
        if self.spec.reward == "shared":
            return leader_reward
        return op_rewards[int(agent[2:])]

    def bootstrap_obs(self, agent: str, env) -> np.ndarray:
        """Observation used for the critic's value bootstrap at a window boundary."""
        if agent in ("leader", "global"):
            return self.encoder.leader_obs(env)
        return self.encoder.follower_obs(env, int(agent[2:]))


def build_variant(name: str | VariantSpec, config: ScenarioConfig) -> Team:
    """Construct a variant's Team; name must be one of VARIANTS."""
    if isinstance(name, VariantSpec):
        return Team(name, config)
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}")
    return Team(VARIANTS[name], config)
