from __future__ import annotations

import numpy as np
import pytest

from taskforge import simworld
from taskforge.agents import ppo
from taskforge.agents.builtin import reach_task
from taskforge.agents.eureka import PolicyAgent
from taskforge.errors import PreconditionError, RewardEvalError, VersionMismatch


def numeric_grad(f, params, eps=1e-6):
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            hi = f()
            p[i] = old - eps
            lo = f()
            p[i] = old
            g[i] = (hi - lo) / (2 * eps)
        out.append(g)
    return out


def small_problem(seed=0, n=12, obs_dim=5):
    rng = np.random.default_rng(seed)
    pi = ppo.Mlp((obs_dim, 6, 6, ppo.ACT_DIM), rng, out_gain=0.5)
    log_std = rng.normal(-0.5, 0.1, ppo.ACT_DIM)
    obs = rng.normal(size=(n, obs_dim))
    act = rng.normal(size=(n, ppo.ACT_DIM))
    mu, _ = pi.forward(obs)
    # old log-probs spread ratios across both sides of the clip range
    old = ppo._gauss_logp(act, mu, log_std) + rng.uniform(-0.5, 0.5, n)
    adv = rng.normal(size=n)
    return pi, log_std, obs, act, old, adv


def test_policy_loss_gradient_matches_finite_differences():
    pi, log_std, obs, act, old, adv = small_problem()
    _, grads = ppo.policy_loss(pi, log_std, obs, act, old, adv)
    num = numeric_grad(lambda: ppo.policy_loss(pi, log_std, obs, act, old, adv)[0], pi.params + [log_std])
    for g, n in zip(grads, num):
        assert np.allclose(g, n, atol=1e-6, rtol=1e-4)


def test_value_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    vf = ppo.Mlp((4, 5, 5, 1), rng)
    obs, ret = rng.normal(size=(10, 4)), rng.normal(size=10)
    _, grads = ppo.value_loss(vf, obs, ret)
    num = numeric_grad(lambda: ppo.value_loss(vf, obs, ret)[0], vf.params)
    for g, n in zip(grads, num):
        assert np.allclose(g, n, atol=1e-7, rtol=1e-5)


def test_gauss_logp_matches_scipy():
    from scipy.stats import norm

    rng = np.random.default_rng(2)
    a, mu, ls = rng.normal(size=(6, 3)), rng.normal(size=(6, 3)), rng.normal(size=3) * 0.3
    want = norm.logpdf(a, mu, np.exp(ls)).sum(axis=1)
    assert np.allclose(ppo._gauss_logp(a, mu, ls), want)


def test_running_norm_matches_batch_statistics():
    rng = np.random.default_rng(3)
    data = rng.normal(2.0, 3.0, size=(500, 4))
    rn = ppo.RunningNorm(4)
    for chunk in np.array_split(data, 7):
        rn.update(chunk)
    assert np.allclose(rn.mean, data.mean(axis=0), atol=1e-4)
    assert np.allclose(rn.var, data.var(axis=0), rtol=1e-3)


def test_adam_minimises_quadratic():
    x = np.array([3.0, -2.0])
    opt = ppo.Adam([x], lr=0.05)
    for _ in range(500):
        opt.step([2 * x])
    assert np.allclose(x, 0.0, atol=1e-2)


def test_apply_action_clamps_to_workspace():
    w = simworld.reset(reach_task(), 0)
    act = ppo.apply_action(w, np.array([50.0, 0, 0, 0, 0, 0, 1.0]))
    assert np.isclose(act.target.position[0], min(w.eef_position()[0] + ppo.POS_SCALE, w.workspace.max[0]))
    assert act.gripper_closed


@pytest.fixture(scope="module")
def short_run():
    return ppo.ppo_train(reach_task(), n_envs=4, iters=3, horizon=10, seed=5, pool_size=4)


def test_training_is_deterministic(short_run):
    again = ppo.ppo_train(reach_task(), n_envs=4, iters=3, horizon=10, seed=5, pool_size=4)
    assert again.snapshot == short_run.snapshot and again.curve == short_run.curve
    other = ppo.ppo_train(reach_task(), n_envs=4, iters=3, horizon=10, seed=6, pool_size=4)
    assert other.snapshot != short_run.snapshot


def test_snapshot_roundtrip(short_run, tmp_path):
    data = short_run.snapshot.to_bytes()
    back = ppo.PolicySnapshot.from_bytes(data)
    assert back == short_run.snapshot and back.stats["iterations"] == 3
    obs = np.ones(back.obs_dim)
    assert np.array_equal(back.act(obs), short_run.snapshot.act(obs))
    with pytest.raises(VersionMismatch):
        ppo.PolicySnapshot.from_bytes(b"XXXX" + data[4:])
    with pytest.raises(VersionMismatch):
        ppo.PolicySnapshot.from_bytes(data + b"\x00" * 8)


def test_policy_agent_rollout_is_deterministic(short_run):
    agent = PolicyAgent(short_run.snapshot, horizon=10)
    a, b = agent.run(reach_task(), 3), agent.run(reach_task(), 3)
    assert a.states == b.states and len(a.actions) <= 10


def test_contact_init_fraction_follows_decay(short_run):
    from taskforge.agents.builtin import narrow_grasp_task

    res = ppo.ppo_train(narrow_grasp_task(), n_envs=4, iters=2, horizon=5, seed=0, pool_size=2, contact_init=True)
    assert res.contact_fractions[0] == 1.0
    assert short_run.contact_fractions == [0.0, 0.0, 0.0]


def test_reward_errors_are_typed():
    w = simworld.reset(reach_task(), 0)
    bad = ppo.RewardCandidate("1 / (x(red_cube) - x(red_cube))", "bad").compile(w.program.symbols)
    with pytest.raises(RewardEvalError) as exc:
        ppo.eval_reward(bad, w, False, "bad")
    assert exc.value.candidate_id == "bad"


def test_train_preconditions():
    with pytest.raises(PreconditionError):
        ppo.ppo_train(reach_task(), n_envs=0)
