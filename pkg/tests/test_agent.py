import numpy as np
import pytest

from rldt.agent import Agent, AgentConfig, RolloutContext
from rldt.data import ReplayBuffer, sample_batch
from rldt.envs import BanditEnv, PointMassEnv, generate_offline
from rldt.nn import TransformerConfig


def bandit_agent(seed=0, **kw):
    tcfg = TransformerConfig(state_dim=1, action_dim=1, action_low=[-1.0],
                             action_high=[1.0], n_layers=1, n_heads=2,
                             embed_dim=16, dropout_rate=0.0, context_len=2)
    return Agent(AgentConfig(tcfg, critic_hidden=(16, 16), **kw), seed)


def pointmass_agent(seed=0):
    tcfg = TransformerConfig(state_dim=4, action_dim=2,
                             action_low=[-1.0, -1.0], action_high=[1.0, 1.0],
                             n_layers=1, n_heads=2, embed_dim=16,
                             dropout_rate=0.0, context_len=4)
    return Agent(AgentConfig(tcfg, critic_hidden=(16, 16)), seed)


def zero_policy(agent):
    for p in agent.policy:
        if not p.name.endswith(".g"):
            p.data[...] = 0.0


def set_constant_critic(params, value, in_dim):
    for p in params:
        p.data[...] = 0.0
    params["l1.b"].data[...] = 0.0
    # output bias carries the constant
    out_name = [p.name for p in params if p.name.endswith(".b")][-1]
    params[out_name].data[...] = value


class TestRolloutContext:
    def test_advance_rtg_examples(self):
        ctx = RolloutContext(10.0, 3)
        ctx.advance_rtg(3.0)
        assert ctx.rtg == 7.0
        ctx2 = RolloutContext(1.0, 3)
        ctx2.advance_rtg(-2.0)
        assert ctx2.rtg == 3.0

    def test_telescoping_over_episode(self):
        rewards = [0.5, -1.0, 2.25, 0.125]
        ctx = RolloutContext(5.0, 4)
        for r in rewards:
            ctx.advance_rtg(r)
        assert ctx.rtg == 5.0 - sum(rewards)

    def test_ring_buffer_capacity(self):
        ctx = RolloutContext(1.0, 2)
        for i in range(5):
            ctx.push_state(np.array([float(i)]))
            ctx.record_action(np.array([0.0]))
            ctx.advance_rtg(0.0)
        states, actions, rtgs, ts, mask = ctx.arrays(1)
        assert states.shape == (1, 2, 1)
        assert states[0, :, 0].tolist() == [3.0, 4.0]
        assert ts[0].tolist() == [3, 4]


class TestAct:
    def test_deterministic_without_noise(self):
        agent = bandit_agent()
        ctx = RolloutContext(1.0, 2)
        ctx.push_state(np.zeros(1))
        a1 = agent.act(ctx, explore_noise=0.0)
        a2 = agent.act(ctx, explore_noise=0.0)
        assert np.array_equal(a1, a2)

    def test_zero_policy_returns_midpoint(self):
        agent = bandit_agent()
        zero_policy(agent)
        ctx = RolloutContext(1.0, 2)
        ctx.push_state(np.zeros(1))
        assert agent.act(ctx, 0.0) == pytest.approx(0.0)

    def test_noisy_action_stays_in_bounds(self):
        agent = bandit_agent()
        ctx = RolloutContext(1.0, 2)
        ctx.push_state(np.zeros(1))
        for kind in ("gaussian", "uniform"):
            for _ in range(50):
                a = agent.act(ctx, explore_noise=0.7, noise_kind=kind)
                assert -1.0 <= a[0] <= 1.0

    def test_unknown_noise_kind(self):
        agent = bandit_agent()
        ctx = RolloutContext(1.0, 2)
        ctx.push_state(np.zeros(1))
        with pytest.raises(ValueError, match="noise kind"):
            agent.act(ctx, 0.1, "cauchy")


class TestCollect:
    def test_bandit_episode_length_one(self):
        agent = bandit_agent()
        traj = agent.collect_episode(BanditEnv(0), 1.0, 1)
        assert len(traj) == 1
        assert traj.dones[-1]

    def test_pointmass_episode_bounded_by_horizon(self):
        agent = pointmass_agent()
        traj = agent.collect_episode(PointMassEnv(0), -40.0, 2)
        assert 1 <= len(traj) <= 100

    def test_fixed_seed_bit_identical(self):
        def collect():
            agent = pointmass_agent(3)
            env = PointMassEnv(7)
            return agent.collect_episode(env, -40.0, 2, explore_noise=0.1)

        t1, t2 = collect(), collect()
        assert np.array_equal(t1.states, t2.states)
        assert np.array_equal(t1.actions, t2.actions)
        assert np.array_equal(t1.rewards, t2.rewards)

    def test_rollout_rtg_telescopes(self):
        agent = pointmass_agent()
        env = PointMassEnv(1)
        s = env.reset()
        ctx = RolloutContext(-40.0, 2)
        collected = 0.0
        for _ in range(10):
            ctx.push_state(s)
            a = agent.act(ctx, 0.0)
            ctx.record_action(a)
            res = env.step(a)
            collected += res.reward
            ctx.advance_rtg(res.reward)
            s = res.next_state
            assert ctx.rtg == pytest.approx(-40.0 - collected, abs=1e-12)

    def test_collect_epoch_counts(self):
        agent = bandit_agent()
        trajs = agent.collect_epoch(BanditEnv(0), 1, 1.0, 1)
        assert len(trajs) == 1
        trajs = agent.collect_epoch(BanditEnv(0), 64, 1.0, 1)
        assert len(trajs) == 64
        agent2 = pointmass_agent()
        trajs = agent2.collect_epoch(PointMassEnv(0), 250, -40.0, 2,
                                     explore_noise=0.1)
        total = sum(len(t) for t in trajs)
        assert 250 <= total <= 250 + 99


class TestTargetQ:
    def batch_for(self, agent, env, n=16, t_train=2):
        ds = generate_offline(env, "random", 64, seed=0)
        buf = ReplayBuffer(100)
        buf.extend(ds.trajectories)
        return sample_batch(buf, t_train, n, np.random.default_rng(0))

    def test_terminal_target_is_reward(self):
        agent = bandit_agent()
        batch = self.batch_for(agent, BanditEnv(0), t_train=1)
        y = agent.target_q_batch(batch, gamma=0.99, policy_noise=0.2,
                                 noise_clip=0.5)
        assert np.array_equal(y, batch.rewards)  # bandit: every step terminal

    def test_gamma_zero_target_is_reward(self):
        agent = pointmass_agent()
        batch = self.batch_for(agent, PointMassEnv(0))
        y = agent.target_q_batch(batch, gamma=1e-300, policy_noise=0.0,
                                 noise_clip=0.5)
        assert np.allclose(y, batch.rewards, atol=1e-290)

    def test_constant_critics_min_arithmetic(self):
        agent = pointmass_agent()
        set_constant_critic(agent.target_critic1, 2.0, 6)
        set_constant_critic(agent.target_critic2, 5.0, 6)
        batch = self.batch_for(agent, PointMassEnv(0))
        y = agent.target_q_batch(batch, gamma=0.99, policy_noise=0.0,
                                 noise_clip=0.5)
        want = batch.rewards + 0.99 * (1.0 - batch.dones) * 2.0
        assert np.allclose(y, want, atol=1e-12)

    def test_min_dominance_thousand_cases(self):
        agent = pointmass_agent()
        batch = self.batch_for(agent, PointMassEnv(0), n=1000)
        rng_state = agent.rngs["smooth"].bit_generator.state
        y_min = agent.target_q_batch(batch, 0.99, 0.2, 0.5)
        agent.rngs["smooth"].bit_generator.state = rng_state
        y_single = agent.target_q_batch(batch, 0.99, 0.2, 0.5, single_critic=True)
        # swap critics to get the other single-critic target
        agent.target_critic1, agent.target_critic2 = (agent.target_critic2,
                                                      agent.target_critic1)
        agent.rngs["smooth"].bit_generator.state = rng_state
        y_single2 = agent.target_q_batch(batch, 0.99, 0.2, 0.5, single_critic=True)
        assert np.all(y_min <= y_single + 1e-15)
        assert np.all(y_min <= y_single2 + 1e-15)
        assert np.all(np.maximum(y_min, np.minimum(y_single, y_single2)) == y_min)

    def test_smoothed_action_within_bounds_and_clip(self):
        agent = pointmass_agent()
        tcfg = agent.cfg.transformer
        batch = self.batch_for(agent, PointMassEnv(0), n=64)
        with np.errstate(all="raise"):
            mu = agent.policy_forward(agent.target_policy, batch.next_states,
                                      batch.next_actions, batch.next_rtgs,
                                      batch.next_timesteps, batch.next_mask).data
        eps = agent.rngs["smooth"].normal(0.0, 0.2, size=mu.shape)
        clipped = np.clip(eps, -0.5, 0.5)
        assert np.all(np.abs(clipped) <= 0.5)
        a_tar = np.clip(mu + clipped, tcfg.action_low, tcfg.action_high)
        assert np.all(a_tar >= tcfg.action_low) and np.all(a_tar <= tcfg.action_high)

    def test_literal_eq3_uses_current_state(self):
        agent = pointmass_agent()
        batch = self.batch_for(agent, PointMassEnv(0))
        state = agent.rngs["smooth"].bit_generator.state
        y1 = agent.target_q_batch(batch, 0.99, 0.0, 0.5)
        agent.rngs["smooth"].bit_generator.state = state
        y2 = agent.target_q_batch(batch, 0.99, 0.0, 0.5, literal_eq3=True)
        assert not np.allclose(y1, y2)


class TestPolyak:
    def test_tau_one_copies_live(self):
        agent = bandit_agent(tau=1.0)
        for p in agent.policy:
            p.data[...] += 1.0
        agent.polyak_update()
        for p, q in zip(agent.policy, agent.target_policy, strict=True):
            assert np.array_equal(p.data, q.data)

    def test_table_ratio_example(self):
        agent = bandit_agent(tau=0.005)
        for ps in (agent.policy,):
            for p in ps:
                p.data[...] = 1.0
        for q in agent.target_policy:
            q.data[...] = 0.0
        agent.polyak_update()
        assert np.allclose(agent.target_policy.flat_data, 0.005)

    def test_tau_zero_freezes_targets(self):
        agent = bandit_agent()
        agent.cfg.tau = 0.0  # exercise the formula below the config guard
        before = agent.target_policy.flat_data.copy()
        for p in agent.policy:
            p.data[...] += 3.0
        agent.polyak_update()
        assert np.array_equal(agent.target_policy.flat_data, before)

    def test_closed_form_geometric_decay(self):
        agent = bandit_agent(tau=0.12)
        theta0 = agent.target_policy.flat_data.copy()
        theta = agent.policy.flat_data.copy()
        for _ in range(10):
            agent.polyak_update()
        want = theta + (1.0 - 0.12) ** 10 * (theta0 - theta)
        assert np.max(np.abs(agent.target_policy.flat_data - want)) <= 1e-12

    def test_invalid_tau_rejected(self):
        with pytest.raises(ValueError, match="tau"):
            bandit_agent(tau=1.5)


class TestCheckpoint:
    def test_resume_is_bit_identical(self, tmp_path):
        from rldt.envs import bandit_dataset
        from rldt.train import TrainConfig, pretrain

        cfg = TrainConfig(rtg_eval=1.0, rtg_rollout=1.0, batch_size=8,
                          T_train=1, T_eval=1, pretrain_steps=10,
                          buffer_capacity=200, critic_updates_per_epoch=4,
                          actor_updates_per_epoch=2)
        ds = bandit_dataset(0)

        agent = bandit_agent(7)
        agent.cfg.transformer.context_len = 1
        buffer, _ = pretrain(agent, ds, cfg)
        agent.save(tmp_path / "ck.pkl")
        from rldt.train import _update_phase
        _update_phase(agent, buffer, cfg, 10, 0.1, 1.0)
        after_a = agent.policy.flat_data.copy()
        after_c = agent.critic1.flat_data.copy()

        agent2 = bandit_agent(999)  # different seed; checkpoint must override
        agent2.cfg.transformer.context_len = 1
        agent2.load(tmp_path / "ck.pkl")
        buffer2 = ReplayBuffer(cfg.buffer_capacity)
        buffer2.extend(ds.trajectories)
        _update_phase(agent2, buffer2, cfg, 10, 0.1, 1.0)
        assert np.array_equal(agent2.policy.flat_data, after_a)
        assert np.array_equal(agent2.critic1.flat_data, after_c)

    def test_version_checked(self, tmp_path):
        import pickle
        agent = bandit_agent()
        with open(tmp_path / "bad.pkl", "wb") as f:
            pickle.dump({"version": 99}, f)
        with pytest.raises(ValueError, match="version"):
            agent.load(tmp_path / "bad.pkl")


def test_critics_initialized_from_independent_streams():
    agent = bandit_agent()
    assert not np.array_equal(agent.critic1.flat_data, agent.critic2.flat_data)
