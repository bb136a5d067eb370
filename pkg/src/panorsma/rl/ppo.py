"""Clipped-surrogate policy optimization over the streaming environment.

Rollouts fill a fixed-size buffer (one tuple per slot); every time the global
step counter crosses the update horizon, the buffer is turned into discounted
returns and advantages and replayed for a configured number of iterations in
fixed-order minibatch segments, each restarted from the recurrent state
snapshotted during collection. Exploration noise decays linearly; gradients
are clipped by their global norm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .nets import ParamDict


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.4
    clip_eps: float = 0.1
    update_iters: int = 2          # optimization passes per buffer
    update_horizon: int = 1000     # steps between parameter updates
    minibatch: int = 128           # segment length for recurrent replay
    learn_rate: float = 1e-4
    grad_clip_norm: float = 0.5
    explore_std: float = 0.3       # initial extra action noise
    explore_final_frac: float = 0.1
    hidden_dim: int = 64
    epochs: int = 150              # one epoch = one episode
    normalize_advantages: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.update_iters < 1:
            raise ValueError("need at least one update iteration")
        if self.update_horizon < self.minibatch:
            raise ValueError("update horizon must cover at least one minibatch")
        if self.minibatch < 1 or self.learn_rate <= 0 or self.hidden_dim < 1:
            raise ValueError("invalid minibatch, learning rate, or hidden size")


@dataclass
class AgentParams:
    actor: ParamDict
    critic: ParamDict
    obs_dim: int
    act_dim: int
    hidden_dim: int

    def save(self, path, config: dict | None = None, update_counter: int = 0) -> None:
        payload = {
            "obs_dim": self.obs_dim, "act_dim": self.act_dim,
            "hidden_dim": self.hidden_dim, "update_counter": update_counter,
            "config": config or {},
            "actor": {k: v.tolist() for k, v in self.actor.items()},
            "critic": {k: v.tolist() for k, v in self.critic.items()},
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> tuple["AgentParams", dict, int]:
        with open(path) as fh:
            payload = json.load(fh)
        agent = cls(
            actor={k: np.asarray(v, dtype=float) for k, v in payload["actor"].items()},
            critic={k: np.asarray(v, dtype=float) for k, v in payload["critic"].items()},
            obs_dim=payload["obs_dim"], act_dim=payload["act_dim"],
            hidden_dim=payload["hidden_dim"],
        )
        return agent, payload.get("config", {}), payload.get("update_counter", 0)


def init_agent(rng: np.random.Generator, obs_dim: int, act_dim: int,
               hidden_dim: int) -> AgentParams:
    return AgentParams(
        actor=nets.init_policy(rng, obs_dim, act_dim, hidden_dim),
        critic=nets.init_critic(rng, obs_dim, hidden_dim),
        obs_dim=obs_dim, act_dim=act_dim, hidden_dim=hidden_dim,
    )


class RolloutBuffer:
    """Fixed-capacity store of per-step tuples plus recurrent segment anchors."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, segment_len: int):
        self.capacity = capacity
        self.segment_len = segment_len
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.log_probs = np.zeros(capacity)
        self.values = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.episode_starts = np.zeros(capacity, dtype=bool)
        self.segment_states: dict[int, tuple] = {}
        self.pos = 0

    def __len__(self) -> int:
        return self.pos

    @property
    def full(self) -> bool:
        return self.pos >= self.capacity

    def add(self, obs, action, log_prob, value, reward, done, episode_start,
            actor_state, critic_state) -> None:
        if self.full:
            raise ValueError("buffer already full")
        i = self.pos
        if i % self.segment_len == 0:
            self.segment_states[i] = (
                actor_state[0].copy(), actor_state[1].copy(),
                critic_state[0].copy(), critic_state[1].copy(),
            )
        self.obs[i] = obs
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.values[i] = value
        self.rewards[i] = reward
        self.dones[i] = done
        self.episode_starts[i] = episode_start
        self.pos += 1

    def rewind_to_segment_boundary(self) -> None:
        """Drop a trailing partial segment (used when a rollout stream drains)."""
        self.pos = (self.pos // self.segment_len) * self.segment_len

    def segments(self):
        """Yield (slice, actor h0, actor c0, critic h0, critic c0, resets)."""
        for start in range(0, self.pos, self.segment_len):
            stop = min(start + self.segment_len, self.pos)
            h_a, c_a, h_c, c_c = self.segment_states[start]
            yield slice(start, stop), h_a, c_a, h_c, c_c, self.episode_starts[start:stop]

    def clear(self) -> None:
        self.pos = 0
        self.segment_states.clear()


def returns_and_advantages(rewards, dones, values, gamma: float):
    """Backward-recursed discounted returns (zero beyond the horizon) and G - V."""
    rewards = np.asarray(rewards, dtype=float)
    dones = np.asarray(dones, dtype=float)
    values = np.asarray(values, dtype=float)
    if not len(rewards) == len(dones) == len(values):
        raise ValueError("rewards, dones and values must have equal length")
    n = len(rewards)
    returns = np.empty(n)
    future = 0.0
    for i in range(n - 1, -1, -1):
        future = rewards[i] + gamma * (1.0 - dones[i]) * future
        returns[i] = future
    return returns, returns - values


def ppo_losses(new_log_probs, old_log_probs, advantages, values, returns,
               clip_eps: float):
    """(mean clipped actor objective, mean squared value error); evaluation only."""
    new_log_probs = np.asarray(new_log_probs, dtype=float)
    old_log_probs = np.asarray(old_log_probs, dtype=float)
    advantages = np.asarray(advantages, dtype=float)
    ratios = np.exp(new_log_probs - old_log_probs)
    clipped = np.clip(ratios, 1.0 - clip_eps, 1.0 + clip_eps)
    actor_objective = float(np.minimum(ratios * advantages, clipped * advantages).mean())
    err = np.asarray(values, dtype=float) - np.asarray(returns, dtype=float)
    return actor_objective, float(np.mean(err * err))


class Adam:
    """Adam on a parameter dict, updating in place."""

    def __init__(self, params: ParamDict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: ParamDict, grads: ParamDict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass
class UpdateStats:
    returns: np.ndarray
    advantages: np.ndarray
    ratios: np.ndarray
    actor_loss: float
    critic_loss: float
    actor_grad_norm: float
    critic_grad_norm: float
    update_counter: int


@dataclass
class Optimizers:
    actor: Adam
    critic: Adam

    @classmethod
    def for_agent(cls, agent: AgentParams, lr: float) -> "Optimizers":
        return cls(actor=Adam(agent.actor, lr), critic=Adam(agent.critic, lr))


def update(buffer: RolloutBuffer, agent: AgentParams, cfg: PpoConfig,
           opt: Optimizers | None = None, update_counter: int = 0) -> UpdateStats:
    """Run the configured iterations of clipped-surrogate / value-error descent.

    The buffer is cleared on exit. Advantages use raw G - V; normalization
    (when enabled) rescales them once per update for gradient conditioning.
    """
    if len(buffer) == 0:
        raise ValueError("cannot update from an empty buffer")
    if opt is None:
        opt = Optimizers.for_agent(agent, cfg.learn_rate)
    returns, advantages = returns_and_advantages(
        buffer.rewards[:buffer.pos], buffer.dones[:buffer.pos],
        buffer.values[:buffer.pos], cfg.gamma,
    )
    adv = advantages
    if cfg.normalize_advantages:
        adv = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    ratios = np.ones(len(buffer))
    actor_losses, critic_losses, a_norms, c_norms = [], [], [], []
    for _ in range(cfg.update_iters):
        update_counter += 1
        for seg, h_a, c_a, h_c, c_c, resets in buffer.segments():
            scale = (seg.stop - seg.start) / len(buffer)
            a_loss, a_grads, seg_ratios, _ = nets.actor_segment_loss(
                agent.actor, buffer.obs[seg], buffer.actions[seg],
                buffer.log_probs[seg], adv[seg], h_a, c_a, resets,
                cfg.clip_eps,
            )
            a_grads, a_norm = nets.clip_by_global_norm(a_grads, cfg.grad_clip_norm)
            opt.actor.step(agent.actor, a_grads)

            c_loss, c_grads, _ = nets.critic_segment_loss(
                agent.critic, buffer.obs[seg], returns[seg], h_c, c_c, resets,
            )
            c_grads, c_norm = nets.clip_by_global_norm(c_grads, cfg.grad_clip_norm)
            opt.critic.step(agent.critic, c_grads)

            ratios[seg] = seg_ratios
            actor_losses.append(a_loss * scale)
            critic_losses.append(c_loss * scale)
            a_norms.append(a_norm)
            c_norms.append(c_norm)

    stats = UpdateStats(
        returns=returns, advantages=advantages, ratios=ratios,
        actor_loss=float(np.sum(actor_losses) / cfg.update_iters),
        critic_loss=float(np.sum(critic_losses) / cfg.update_iters),
        actor_grad_norm=float(np.mean(a_norms)),
        critic_grad_norm=float(np.mean(c_norms)),
        update_counter=update_counter,
    )
    buffer.clear()
    return stats


@dataclass
class TrainResult:
    agent: AgentParams
    episode_rewards: list[float]
    log_rows: list[dict]
    update_counter: int


class _Worker:
    """One rollout stream: an environment, a sampling generator, episode state."""

    def __init__(self, index: int, env, rng: np.random.Generator, hidden: int):
        self.index = index
        self.env = env
        self.rng = rng
        self.hidden = hidden
        self.episode = None
        self.slot = 0
        self.state = None
        self.actor_hc = (np.zeros(hidden), np.zeros(hidden))
        self.critic_hc = (np.zeros(hidden), np.zeros(hidden))
        self.episode_start = False
        self.episode_rewards: list[float] = []

    def begin_episode(self, episode: int) -> None:
        self.episode = episode
        self.slot = 0
        self.state = self.env.reset(episode)
        self.actor_hc = (np.zeros(self.hidden), np.zeros(self.hidden))
        self.critic_hc = (np.zeros(self.hidden), np.zeros(self.hidden))
        self.episode_start = True
        self.episode_rewards = []


def train(env_factory, cfg: PpoConfig, seed: int, n_workers: int = 1,
          progress=None) -> TrainResult:
    """Run the episode/update loop: act, score, store, update every horizon steps.

    ``env_factory(worker_seed)`` builds one environment per worker; workers
    hold independent generators and are drained in fixed index order, so a
    run is reproducible for a given worker count. Exploration noise decays
    linearly to ``explore_final_frac`` of its initial scale over the planned
    number of updates.
    """
    if n_workers < 1:
        raise ValueError("need at least one worker")
    root = np.random.SeedSequence(seed)
    init_ss, *worker_ss = root.spawn(1 + n_workers)
    rng = np.random.default_rng(init_ss)

    workers = []
    for i, wss in enumerate(worker_ss):
        env_ss, act_ss = wss.spawn(2)
        env = env_factory(int(env_ss.generate_state(1, dtype=np.uint32)[0]))
        workers.append(_Worker(i, env, np.random.default_rng(act_ss), cfg.hidden_dim))

    obs_dim = workers[0].env.observation_dim
    act_dim = workers[0].env.action_dim
    episode_len = workers[0].env.cfg.episode_len
    agent = init_agent(rng, obs_dim, act_dim, cfg.hidden_dim)
    opt = Optimizers.for_agent(agent, cfg.learn_rate)
    buffer = RolloutBuffer(cfg.update_horizon, obs_dim, act_dim, cfg.minibatch)

    total_updates = max(1, (cfg.epochs * episode_len) // cfg.update_horizon)
    noise_scale = cfg.explore_std
    update_counter = 0
    updates_done = 0
    last_stats: UpdateStats | None = None
    g = 0
    next_episode = 0
    episode_log: list[tuple[int, int, float]] = []
    log_rows: list[dict] = []

    def noise_for(done_updates: int) -> float:
        frac = min(1.0, done_updates / total_updates)
        return cfg.explore_std * (1.0 - (1.0 - cfg.explore_final_frac) * frac)

    def finish_episode(worker: _Worker) -> None:
        mean_reward = float(np.mean(worker.episode_rewards))
        episode_log.append((worker.episode, worker.index, mean_reward))
        log_rows.append({
            "episode": worker.episode,
            "mean_reward": mean_reward,
            "actor_loss": last_stats.actor_loss if last_stats else float("nan"),
            "critic_loss": last_stats.critic_loss if last_stats else float("nan"),
            "grad_norm": last_stats.actor_grad_norm if last_stats else float("nan"),
            "noise_scale": noise_scale,
        })
        if progress is not None:
            progress(worker.episode, mean_reward)
        worker.episode = None

    active = 0
    while next_episode < cfg.epochs or any(w.episode is not None for w in workers):
        worker = workers[active]
        active = (active + 1) % n_workers
        if worker.episode is None and next_episode >= cfg.epochs:
            continue
        # One contiguous chunk per turn, ending exactly on a segment boundary
        # so every stored segment replays from its own recurrent anchor.
        chunk = min(cfg.minibatch, buffer.capacity - len(buffer))
        collected = 0
        while collected < chunk:
            if worker.episode is None:
                if next_episode >= cfg.epochs:
                    break
                worker.begin_episode(next_episode)
                next_episode += 1
            obs = worker.env.observe(worker.state)
            # Anchor states are the ones *entering* this step so segment
            # replays reproduce the rollout recurrence exactly.
            pre_actor_hc = worker.actor_hc
            pre_critic_hc = worker.critic_hc
            action, log_prob, worker.actor_hc = nets.policy_act(
                agent.actor, obs, worker.actor_hc, noise_scale, worker.rng,
            )
            value, worker.critic_hc = nets.critic_value(agent.critic, obs,
                                                        worker.critic_hc)
            result = worker.env.step(worker.env.project_action(action))
            buffer.add(obs, action, log_prob, value, result.reward, result.done,
                       worker.episode_start, pre_actor_hc, pre_critic_hc)
            worker.episode_start = False
            worker.episode_rewards.append(result.reward)
            worker.state = result.next_state
            collected += 1
            g += 1
            if result.done:
                finish_episode(worker)
            if g % cfg.update_horizon == 0:
                stats = update(buffer, agent, cfg, opt, update_counter)
                update_counter = stats.update_counter
                updates_done += 1
                last_stats = stats
                noise_scale = noise_for(updates_done)
        if collected < chunk:
            # stream drained mid-chunk: drop the unanchored partial segment
            buffer.rewind_to_segment_boundary()

    episode_log.sort(key=lambda rec: (rec[0], rec[1]))
    log_rows.sort(key=lambda row: row["episode"])
    rewards = [r for _, _, r in episode_log]
    return TrainResult(agent=agent, episode_rewards=rewards, log_rows=log_rows,
                       update_counter=update_counter)


def evaluate(env, agent: AgentParams, episodes: int, start_episode: int = 0):
    """Deterministic rollouts (no exploration noise); returns per-step results."""
    all_results = []
    for k in range(start_episode, start_episode + episodes):
        state = env.reset(k)
        actor_hc = nets.zero_state(agent.actor)
        episode_results = []
        done = False
        while not done:
            obs = env.observe(state)
            action, _, actor_hc = nets.policy_act(agent.actor, obs, actor_hc,
                                                  0.0, None, deterministic=True)
            result = env.step(env.project_action(action))
            episode_results.append(result)
            state = result.next_state
            done = result.done
        all_results.append(episode_results)
    return all_results
