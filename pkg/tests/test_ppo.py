import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import discounted_returns_loops
from panorsma.channel import ChannelParams
from panorsma.env import EnvConfig, StreamingEnv
from panorsma.qos import QosConfig
from panorsma.rl import nets, ppo


def small_env_config(num_users=2, episode_len=10):
    return EnvConfig(
        channel=ChannelParams(num_users=num_users),
        qos=QosConfig(),
        episode_len=episode_len,
        frame_h=48, frame_w=96,
        p_max_w=1.0,
    )


def small_ppo_config(**overrides):
    defaults = dict(update_horizon=40, minibatch=16, epochs=4, hidden_dim=8,
                    learn_rate=1e-3)
    defaults.update(overrides)
    return ppo.PpoConfig(**defaults)


def filled_buffer(rng, env_cfg, steps=40, seg=16, hidden=8):
    """Roll a random-within-projection policy to fill a buffer."""
    env = StreamingEnv(env_cfg, seed=3)
    actor = nets.init_policy(rng, env.observation_dim, env.action_dim, hidden)
    critic = nets.init_critic(rng, env.observation_dim, hidden)
    buffer = ppo.RolloutBuffer(steps, env.observation_dim, env.action_dim, seg)
    state = env.reset(0)
    hc_a = nets.zero_state(actor)
    hc_c = nets.zero_state(critic)
    episode_start = True
    episode = 0
    while not buffer.full:
        obs = env.observe(state)
        pre_a, pre_c = hc_a, hc_c
        action, logp, hc_a = nets.policy_act(actor, obs, hc_a, 0.1, rng)
        value, hc_c = nets.critic_value(critic, obs, hc_c)
        result = env.step(env.project_action(action))
        buffer.add(obs, action, logp, value, result.reward, result.done,
                   episode_start, pre_a, pre_c)
        episode_start = False
        state = result.next_state
        if result.done:
            episode += 1
            state = env.reset(episode)
            hc_a = nets.zero_state(actor)
            hc_c = nets.zero_state(critic)
            episode_start = True
    agent = ppo.AgentParams(actor=actor, critic=critic,
                            obs_dim=env.observation_dim,
                            act_dim=env.action_dim, hidden_dim=hidden)
    return buffer, agent


class TestReturns:
    def test_hand_recursion_terminal(self):
        returns, adv = ppo.returns_and_advantages(
            [1.0, 1.0, 1.0], [0, 0, 1], [0.0, 0.0, 0.0], 0.4)
        np.testing.assert_allclose(returns, [1.56, 1.4, 1.0])
        np.testing.assert_allclose(adv, returns)

    def test_mid_episode_cut(self):
        returns, _ = ppo.returns_and_advantages(
            [1.0, 1.0, 1.0], [0, 1, 0], [0.0, 0.0, 0.0], 0.4)
        np.testing.assert_allclose(returns, [1.4, 1.0, 1.0])

    def test_gamma_zero(self):
        rewards = [0.3, 0.7, 0.1]
        returns, _ = ppo.returns_and_advantages(rewards, [0, 0, 0],
                                                [0.0] * 3, 0.0)
        np.testing.assert_allclose(returns, rewards)

    def test_advantage_is_return_minus_value(self):
        values = [0.5, -0.25, 1.0]
        returns, adv = ppo.returns_and_advantages([1.0, 2.0, 3.0], [0, 0, 0],
                                                  values, 0.9)
        np.testing.assert_allclose(adv, returns - np.asarray(values))

    @settings(max_examples=150, deadline=None)
    @given(st.data())
    def test_matches_forward_sum_oracle(self, data):
        n = data.draw(st.integers(1, 30))
        rewards = data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n))
        dones = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
        gamma = data.draw(st.floats(0.0, 0.99))
        returns, _ = ppo.returns_and_advantages(rewards, dones, [0.0] * n, gamma)
        np.testing.assert_allclose(
            returns, discounted_returns_loops(rewards, dones, gamma), atol=1e-10)


class TestLosses:
    def test_clip_reference_example(self):
        # u = 1.3, eps = 0.1, advantage 2 -> min(2.6, 2.2) = 2.2.
        obj, _ = ppo.ppo_losses(np.log([1.3]), [0.0], [2.0], [0.0], [0.0], 0.1)
        assert obj == pytest.approx(2.2, abs=1e-12)

    def test_unit_ratio_equals_advantage(self):
        obj, _ = ppo.ppo_losses([0.7], [0.7], [1.7], [0.0], [0.0], 0.3)
        assert obj == pytest.approx(1.7)

    def test_negative_advantage_clip(self):
        obj, _ = ppo.ppo_losses(np.log([0.5]), [0.0], [-1.0], [0.0], [0.0], 0.1)
        assert obj == pytest.approx(-0.9)

    def test_critic_mse(self):
        _, critic = ppo.ppo_losses([0.0], [0.0], [0.0], [1.0, 3.0], [2.0, 2.0], 0.1)
        assert critic == pytest.approx(1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_clipped_objective_lower_bounds_surrogate(self, data):
        n = data.draw(st.integers(1, 20))
        new = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=n, max_size=n)))
        old = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=n, max_size=n)))
        adv = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=n, max_size=n)))
        eps = data.draw(st.floats(0.01, 0.5))
        ratios = np.exp(new - old)
        obj, _ = ppo.ppo_losses(new, old, adv, np.zeros(n), np.zeros(n), eps)
        assert obj <= float(np.mean(ratios * adv)) + 1e-12


class TestUpdate:
    def test_ratio_identity_with_unchanged_params(self):
        rng = np.random.default_rng(0)
        buffer, agent = filled_buffer(rng, small_env_config())
        returns, adv = ppo.returns_and_advantages(
            buffer.rewards[:buffer.pos], buffer.dones[:buffer.pos],
            buffer.values[:buffer.pos], 0.4)
        new_logp = []
        for seg, h_a, c_a, _, _, resets in buffer.segments():
            new_logp.extend(nets.policy_sequence_log_probs(
                agent.actor, buffer.obs[seg], buffer.actions[seg], h_a, c_a,
                resets))
        ratios = np.exp(np.asarray(new_logp) - buffer.log_probs[:buffer.pos])
        np.testing.assert_allclose(ratios, 1.0, atol=1e-10)
        obj, _ = ppo.ppo_losses(new_logp, buffer.log_probs[:buffer.pos],
                                adv, buffer.values[:buffer.pos], returns, 0.1)
        assert obj == pytest.approx(float(adv.mean()), abs=1e-10)

    def test_zero_advantage_leaves_actor_unchanged(self):
        rng = np.random.default_rng(1)
        buffer, agent = filled_buffer(rng, small_env_config())
        # Force advantages to zero: values == returns.
        returns, _ = ppo.returns_and_advantages(
            buffer.rewards[:buffer.pos], buffer.dones[:buffer.pos],
            np.zeros(buffer.pos), 0.4)
        buffer.values[:buffer.pos] = returns
        before = copy.deepcopy(agent.actor)
        cfg = small_ppo_config(normalize_advantages=False)
        ppo.update(buffer, agent, cfg)
        for key in before:
            np.testing.assert_allclose(agent.actor[key], before[key], atol=1e-12)

    def test_critic_descends_on_single_sample(self):
        # Plain small gradient steps on the quadratic value error decrease
        # strictly toward the return target.
        rng = np.random.default_rng(2)
        critic = nets.init_critic(rng, 4, 6)
        xs = rng.normal(size=(1, 4))
        target = np.array([1.3])
        resets = np.array([True])
        losses = []
        for _ in range(50):
            loss, grads, _ = nets.critic_segment_loss(
                critic, xs, target, np.zeros(6), np.zeros(6), resets)
            losses.append(loss)
            grads, _ = nets.clip_by_global_norm(grads, 0.5)
            for key, grad in grads.items():
                critic[key] -= 1e-2 * grad
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]

    def test_critic_converges_under_update(self):
        # The full update() machinery also drives values toward the returns.
        rng = np.random.default_rng(20)
        buffer, agent = filled_buffer(rng, small_env_config())
        cfg = small_ppo_config(update_iters=1, learn_rate=3e-3)
        opt = ppo.Optimizers.for_agent(agent, cfg.learn_rate)
        saved_states = dict(buffer.segment_states)
        pos = buffer.pos
        first_loss = last_loss = None
        for _ in range(40):
            stats = ppo.update(buffer, agent, cfg, opt)
            if first_loss is None:
                first_loss = stats.critic_loss
            last_loss = stats.critic_loss
            buffer.pos = pos
            buffer.segment_states = dict(saved_states)
        assert last_loss < first_loss

    def test_empty_buffer_rejected(self):
        rng = np.random.default_rng(3)
        env_cfg = small_env_config()
        env = StreamingEnv(env_cfg, seed=0)
        buffer = ppo.RolloutBuffer(8, env.observation_dim, env.action_dim, 4)
        agent = ppo.init_agent(rng, env.observation_dim, env.action_dim, 8)
        with pytest.raises(ValueError):
            ppo.update(buffer, agent, small_ppo_config())

    def test_update_counter_advances_per_iteration(self):
        rng = np.random.default_rng(4)
        buffer, agent = filled_buffer(rng, small_env_config())
        stats = ppo.update(buffer, agent, small_ppo_config(update_iters=2),
                           update_counter=5)
        assert stats.update_counter == 7
        assert len(buffer) == 0  # cleared afterward

    def test_no_nans_under_fuzzed_updates(self):
        rng = np.random.default_rng(5)
        env_cfg = small_env_config()
        cfg = small_ppo_config(learn_rate=1e-4)
        buffer, agent = filled_buffer(rng, env_cfg)
        opt = ppo.Optimizers.for_agent(agent, cfg.learn_rate)
        pos = buffer.pos
        saved_states = dict(buffer.segment_states)
        for trial in range(30):
            buffer.rewards[:pos] = rng.uniform(0, 2, pos)
            buffer.values[:pos] = rng.normal(0, 10.0, pos)
            buffer.log_probs[:pos] += rng.normal(0, 0.3, pos)
            ppo.update(buffer, agent, cfg, opt)
            buffer.pos = pos  # refill without recollecting
            buffer.segment_states = dict(saved_states)
        for params in (agent.actor, agent.critic):
            for value in params.values():
                assert np.all(np.isfinite(value))


class TestTrain:
    def test_deterministic_single_worker(self):
        env_cfg = small_env_config()

        def factory(seed):
            return StreamingEnv(env_cfg, seed=seed)

        cfg = small_ppo_config()
        first = ppo.train(factory, cfg, seed=11)
        second = ppo.train(factory, cfg, seed=11)
        assert first.episode_rewards == second.episode_rewards
        for key in first.agent.actor:
            np.testing.assert_array_equal(first.agent.actor[key],
                                          second.agent.actor[key])

    def test_rewards_in_range_and_logged(self):
        env_cfg = small_env_config()

        def factory(seed):
            return StreamingEnv(env_cfg, seed=seed)

        result = ppo.train(factory, small_ppo_config(), seed=12)
        assert len(result.episode_rewards) == 4
        assert all(0.0 <= r <= 2.0 for r in result.episode_rewards)
        assert [row["episode"] for row in result.log_rows] == [0, 1, 2, 3]
        assert {"mean_reward", "actor_loss", "critic_loss", "grad_norm",
                "noise_scale"} <= set(result.log_rows[0])

    def test_two_workers_cover_all_episodes(self):
        env_cfg = small_env_config()

        def factory(seed):
            return StreamingEnv(env_cfg, seed=seed)

        result = ppo.train(factory, small_ppo_config(epochs=6), seed=13,
                           n_workers=2)
        assert len(result.episode_rewards) == 6
        repeat = ppo.train(factory, small_ppo_config(epochs=6), seed=13,
                           n_workers=2)
        assert result.episode_rewards == repeat.episode_rewards

    def test_checkpoint_round_trip(self, tmp_path):
        env_cfg = small_env_config()

        def factory(seed):
            return StreamingEnv(env_cfg, seed=seed)

        result = ppo.train(factory, small_ppo_config(epochs=2), seed=14)
        path = tmp_path / "ckpt.json"
        result.agent.save(path, config={"gamma": 0.4}, update_counter=3)
        loaded, config, counter = ppo.AgentParams.load(path)
        assert counter == 3 and config["gamma"] == 0.4
        for key in result.agent.actor:
            np.testing.assert_array_equal(loaded.actor[key],
                                          result.agent.actor[key])

    def test_learning_signal_on_single_user(self):
        # One user, short slots: final episodes should beat the first ones.
        env_cfg = small_env_config(num_users=1, episode_len=25)

        def factory(seed):
            return StreamingEnv(env_cfg, seed=seed)

        cfg = small_ppo_config(update_horizon=100, minibatch=25, epochs=60,
                               learn_rate=3e-3, explore_std=0.2, hidden_dim=12)
        result = ppo.train(factory, cfg, seed=5)
        first = float(np.mean(result.episode_rewards[:5]))
        last = float(np.mean(result.episode_rewards[-5:]))
        assert last > first


def test_config_invariants():
    with pytest.raises(ValueError):
        ppo.PpoConfig(gamma=1.0)
    with pytest.raises(ValueError):
        ppo.PpoConfig(clip_eps=0.0)
    with pytest.raises(ValueError):
        ppo.PpoConfig(update_horizon=10, minibatch=20)
    with pytest.raises(ValueError):
        ppo.PpoConfig(update_iters=0)
