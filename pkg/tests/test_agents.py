"""Policy networks: action/evaluation consistency, encoding, checkpoints."""

import numpy as np
import pytest
import torch

from fabsched.agents import (
    GOAL_DIM,
    CheckpointError,
    Encoder,
    FollowerPolicy,
    LeaderPolicy,
    RulePolicy,
    build_policy,
    decode_category,
    load_checkpoint,
    sample_categorical,
    save_checkpoint,
)
from fabsched.scenario import sample_episode
from fabsched.simulator import ShopFloorSim


@pytest.fixture()
def tiny_env(tiny_config):
    episode = sample_episode(tiny_config, "medium", 5)
    return ShopFloorSim(tiny_config, episode)


# ------------------------------------------------------------------- encoding

def test_decode_category_layout():
    assert decode_category(0) == (True, 0)
    assert decode_category(1) == (False, 0)
    assert decode_category(2) == (True, 1)
    assert decode_category(3) == (False, 1)


def test_encoder_dimensions(tiny_config):
    enc = Encoder(tiny_config)
    assert enc.ops == [0, 1]
    assert enc.machine_feats == 2 + 2 + 3
    window = tiny_config.demand_window_shifts
    per_op = 2 * enc.machine_feats + 2 * (2 + window) + GOAL_DIM
    assert enc.op_dim == {0: per_op, 1: per_op}
    assert enc.global_dim == 2 * per_op


def test_follower_obs_matches_simulator_state(tiny_config, tiny_env):
    enc = Encoder(tiny_config)
    goal = np.array([0.2, 0.4, 0.6])
    obs = enc.follower_obs(tiny_env, 0, goal=goal)
    assert obs.shape == (enc.op_dim[0],)
    assert obs.min() >= 0.0 and obs.max() <= 1.0
    # goal coordinates ride along unchanged at the tail
    np.testing.assert_array_equal(obs[-GOAL_DIM:], goal)
    # wip features reflect the queues at tick 0
    cap = float(tiny_config.count_cap)
    wip = tiny_env.wip_counts(0)
    start = 2 * enc.machine_feats
    stride = 2 + tiny_config.demand_window_shifts
    for i, p in enumerate(tiny_config.op_products[0]):
        assert obs[start + i * stride] == min(1.0, wip[p] / cap)


def test_leader_obs_concatenates_with_zero_goals(tiny_config, tiny_env):
    enc = Encoder(tiny_config)
    tiny_env.goals = {0: np.array([0.9, 0.9, 0.9]), 1: np.array([0.8, 0.8, 0.8])}
    obs = enc.leader_obs(tiny_env)
    assert obs.shape == (enc.global_dim,)
    # leader never sees its own previous goals
    assert obs[enc.op_dim[0] - GOAL_DIM : enc.op_dim[0]].sum() == 0.0
    assert obs[-GOAL_DIM:].sum() == 0.0


def test_follower_obs_uses_env_goal_when_not_passed(tiny_config, tiny_env):
    enc = Encoder(tiny_config)
    tiny_env.goals = {0: np.array([0.5, 0.6, 0.7])}
    obs = enc.follower_obs(tiny_env, 0)
    np.testing.assert_array_equal(obs[-GOAL_DIM:], [0.5, 0.6, 0.7])


# ------------------------------------------------------------------- sampling

def test_sample_categorical_accepts_unnormalized_weights():
    rng_a = np.random.default_rng(0)
    rng_b = np.random.default_rng(0)
    draws_a = [sample_categorical(np.array([2.0, 2.0]), rng_a) for _ in range(100)]
    draws_b = [sample_categorical(np.array([0.5, 0.5]), rng_b) for _ in range(100)]
    assert draws_a == draws_b


def test_sample_categorical_frequencies_track_probabilities():
    rng = np.random.default_rng(11)
    probs = np.array([0.1, 0.6, 0.3])
    counts = np.zeros(3)
    n = 6000
    for _ in range(n):
        counts[sample_categorical(probs, rng)] += 1
    np.testing.assert_allclose(counts / n, probs, atol=0.02)


def test_sample_categorical_never_exceeds_range():
    rng = np.random.default_rng(2)
    for _ in range(200):
        assert sample_categorical(np.array([0.0, 0.0, 1.0]), rng) == 2


# ---------------------------------------------------- act/evaluate consistency

def test_follower_act_evaluate_logprob_agreement():
    torch.manual_seed(0)
    policy = FollowerPolicy(obs_dim=12, n_machines=3, n_products=2)
    rng = np.random.default_rng(1)
    for _ in range(20):
        obs = rng.random(12)
        avail = rng.integers(0, 2, 3).astype(bool)
        if not avail.any():
            avail[0] = True
        cats, logprob, value = policy.act(obs, avail, rng)
        assert all((c == -1) != a for c, a in zip(cats, avail))
        with torch.no_grad():
            lp, ent, val = policy.evaluate(
                torch.from_numpy(obs).float().unsqueeze(0),
                torch.from_numpy(cats).unsqueeze(0),
                torch.from_numpy(avail.astype(np.float64)).float().unsqueeze(0),
            )
        assert abs(float(lp[0]) - logprob) < 1e-5
        assert abs(float(val[0]) - value) < 1e-6
        assert float(ent[0]) > 0.0


def test_follower_masked_machine_does_not_affect_logprob():
    torch.manual_seed(1)
    policy = FollowerPolicy(obs_dim=8, n_machines=2, n_products=2)
    obs = torch.rand(1, 8)
    mask = torch.tensor([[1.0, 0.0]])
    with torch.no_grad():
        a = policy.evaluate(obs, torch.tensor([[2, -1]]), mask)
        b = policy.evaluate(obs, torch.tensor([[2, 3]]), mask)
    assert torch.allclose(a[0], b[0])
    assert torch.allclose(a[1], b[1])


def test_follower_greedy_takes_argmax():
    torch.manual_seed(2)
    policy = FollowerPolicy(obs_dim=6, n_machines=2, n_products=2)
    obs = np.random.default_rng(0).random(6)
    avail = np.array([True, True])
    cats, _, _ = policy.act(obs, avail, np.random.default_rng(0), greedy=True)
    logits = policy.logits(torch.from_numpy(obs).float().unsqueeze(0))[0]
    expected = logits.argmax(dim=-1).numpy()
    np.testing.assert_array_equal(cats, expected)


def test_leader_act_evaluate_logprob_agreement():
    torch.manual_seed(3)
    policy = LeaderPolicy(obs_dim=10, n_ops=2)
    rng = np.random.default_rng(4)
    for _ in range(20):
        obs = rng.random(10)
        goals, logprob, value = policy.act(obs, rng)
        assert goals.shape == (2, GOAL_DIM)
        assert np.all(goals > 0.0) and np.all(goals < 1.0)
        with torch.no_grad():
            lp, ent, val = policy.evaluate(
                torch.from_numpy(obs).float().unsqueeze(0),
                torch.from_numpy(goals.ravel()).float().unsqueeze(0),
            )
        assert abs(float(lp[0]) - logprob) < 1e-4
        assert abs(float(val[0]) - value) < 1e-6


def test_leader_greedy_emits_beta_mode():
    torch.manual_seed(4)
    policy = LeaderPolicy(obs_dim=5, n_ops=1)
    obs = np.random.default_rng(1).random(5)
    goals, _, _ = policy.act(obs, np.random.default_rng(0), greedy=True)
    with torch.no_grad():
        alpha, beta = policy.params(torch.from_numpy(obs).float().unsqueeze(0))
    a = alpha[0].double().numpy()
    b = beta[0].double().numpy()
    np.testing.assert_allclose(goals, (a - 1.0) / (a + b - 2.0), atol=1e-12)


def test_leader_sampling_is_stream_deterministic():
    torch.manual_seed(5)
    policy = LeaderPolicy(obs_dim=5, n_ops=2)
    obs = np.random.default_rng(2).random(5)
    g1, lp1, _ = policy.act(obs, np.random.default_rng(9))
    g2, lp2, _ = policy.act(obs, np.random.default_rng(9))
    np.testing.assert_array_equal(g1, g2)
    assert lp1 == lp2


def test_rule_act_evaluate_logprob_agreement():
    torch.manual_seed(6)
    policy = RulePolicy(obs_dim=7, n_rules=3)
    rng = np.random.default_rng(5)
    for _ in range(20):
        obs = rng.random(7)
        rule, logprob, value = policy.act(obs, rng)
        assert 0 <= rule < 3
        with torch.no_grad():
            lp, ent, val = policy.evaluate(
                torch.from_numpy(obs).float().unsqueeze(0),
                torch.tensor([rule]),
            )
        assert abs(float(lp[0]) - logprob) < 1e-5
        assert abs(float(val[0]) - value) < 1e-6


def test_rule_greedy_is_deterministic():
    torch.manual_seed(7)
    policy = RulePolicy(obs_dim=4, n_rules=3)
    obs = np.random.default_rng(3).random(4)
    picks = {policy.act(obs, np.random.default_rng(i), greedy=True)[0]
             for i in range(5)}
    assert len(picks) == 1


# ---------------------------------------------------------------- checkpoints

def make_policies():
    torch.manual_seed(10)
    return {
        "op0": FollowerPolicy(obs_dim=9, n_machines=2, n_products=2),
        "leader": LeaderPolicy(obs_dim=18, n_ops=2),
    }


def states_equal(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(
        torch.equal(sa[k], sb[k]) for k in sa
    )


def test_checkpoint_round_trip(tmp_path):
    path = tmp_path / "team.ckpt"
    policies = make_policies()
    save_checkpoint(path, "fp-123", "LFORM-RC", policies, extra={"episodes": 7})
    variant, loaded, extra = load_checkpoint(path, "fp-123")
    assert variant == "LFORM-RC"
    assert extra == {"episodes": 7}
    assert set(loaded) == {"op0", "leader"}
    for name in policies:
        assert states_equal(policies[name], loaded[name])


def test_checkpoint_refuses_other_scenario(tmp_path):
    path = tmp_path / "team.ckpt"
    save_checkpoint(path, "fp-123", "SRM", make_policies())
    with pytest.raises(CheckpointError, match="different scenario"):
        load_checkpoint(path, "fp-456")


def test_checkpoint_refuses_unknown_format(tmp_path):
    path = tmp_path / "weird.ckpt"
    torch.save({"format": "something-else", "fingerprint": "fp"}, path)
    with pytest.raises(CheckpointError, match="format"):
        load_checkpoint(path, "fp")


def test_checkpoint_refuses_garbage_file(tmp_path):
    path = tmp_path / "not_a_checkpoint.txt"
    path.write_text("plain text\n")
    with pytest.raises(CheckpointError, match="unreadable"):
        load_checkpoint(path, "fp")


def test_build_policy_rejects_unknown_kind():
    with pytest.raises(CheckpointError, match="unknown policy kind"):
        build_policy({"kind": "mystery"})


def test_build_policy_reconstructs_from_spec():
    policy = RulePolicy(obs_dim=6, n_rules=3)
    rebuilt = build_policy(policy.spec())
    assert isinstance(rebuilt, RulePolicy)
    assert rebuilt.obs_dim == 6 and rebuilt.n_rules == 3
