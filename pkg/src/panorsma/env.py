"""Slot-by-slot decision environment for downlink panoramic streaming.

State per slot: channel gain powers, per-user semantic-level viewport maps,
and the previous slot's power allocation, bandwidth ratios, common-rate shares
and private rates. Actions choose powers, bandwidth ratios, and the split of
the common rate; the reward is the users' mean service score for the slot.

One environment instance is single-owner and stepped sequentially; run
multiple instances with independent seeds for parallel rollouts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import fov, qos, rates
from .channel import ChannelParams, ChannelState, UserDeployment, place_users, sample_channel
from .fov import HeadTrace, Viewport
from .qos import QosConfig, ScoreBreakdown
from .quality import SurrogateModel, default_surrogate, eval_quality
from .rates import CommonRateSplit, PowerAllocation, RateReport

FOV_WIDTH_DEG = 120.0
FOV_HEIGHT_DEG = 60.0
TRACE_DT_S = 0.1

# Observation scaling: gain powers enter in dB mapped through an affine
# squeeze, rates enter as spectral efficiency over a 10 bit/s/Hz scale.
GAIN_DB_OFFSET = 60.0
GAIN_DB_SPAN = 20.0
SPECTRAL_EFF_SPAN = 10.0


class InfeasibleActionError(ValueError):
    """Action violates the power / cbr / split constraints."""


@dataclass(frozen=True)
class EnvConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    qos: QosConfig = field(default_factory=QosConfig)
    quality_model: SurrogateModel = field(default_factory=default_surrogate)
    o_max: float = 0.125
    o_floor: float = 0.005
    episode_len: int = 200
    scheme: str = "RSMA"
    xi: float = 0.1
    frame_h: int = 960
    frame_w: int = 1920
    p_max_w: float | None = None      # None: derive from the transmit PSD over B
    gop_n: int | None = None
    gop_iframe_factor: float = 2.0
    fov_source: str = "synthetic"     # "synthetic" or a head-trace CSV path
    trace: HeadTrace | None = None    # preloaded trace (overrides fov_source path)

    def __post_init__(self):
        if self.episode_len < 1:
            raise ValueError("episodes need at least one slot")
        if not 0.0 < self.o_max <= 0.125:
            raise ValueError("o_max must lie in (0, 0.125]")
        if not 0.0 < self.o_floor < self.o_max:
            raise ValueError("o_floor must lie in (0, o_max)")
        if self.scheme not in rates.SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.frame_h % fov.GRID_DIVISOR or self.frame_w % fov.GRID_DIVISOR:
            raise ValueError(f"frame dims must be divisible by {fov.GRID_DIVISOR}")
        if self.gop_n is not None and self.gop_n < 1:
            raise ValueError("gop_n must be positive when set")

    @property
    def num_users(self) -> int:
        return self.channel.num_users

    @property
    def power_budget_w(self) -> float:
        return self.p_max_w if self.p_max_w is not None else self.channel.tx_power_w

    @property
    def semantic_shape(self) -> tuple[int, int]:
        factor = 2 ** fov.POOL_LEVELS
        return self.frame_h // factor, self.frame_w // factor


@dataclass(frozen=True)
class EnvAction:
    power: PowerAllocation
    cbr: np.ndarray
    common_split: CommonRateSplit


@dataclass(frozen=True)
class EnvState:
    """Observable state for one slot (previous slot's allocation outcomes)."""

    channel_gain_power: np.ndarray   # (U,)
    semantic_fov: np.ndarray         # (U, h, w) pooled weight maps
    prev_power: PowerAllocation
    prev_cbr: np.ndarray             # (U,)
    prev_common_alloc: np.ndarray    # (U,) bit/s
    prev_private_rate: np.ndarray    # (U,) bit/s
    slot: int

    def to_dict(self) -> dict:
        return {
            "channel_gain_power": self.channel_gain_power.tolist(),
            "semantic_fov": self.semantic_fov.tolist(),
            "prev_power": {"common_w": self.prev_power.common_w,
                           "private_w": self.prev_power.private_w.tolist(),
                           "p_max_w": self.prev_power.p_max_w},
            "prev_cbr": self.prev_cbr.tolist(),
            "prev_common_alloc": self.prev_common_alloc.tolist(),
            "prev_private_rate": self.prev_private_rate.tolist(),
            "slot": self.slot,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvState":
        power = PowerAllocation(common_w=d["prev_power"]["common_w"],
                                private_w=np.asarray(d["prev_power"]["private_w"]),
                                p_max_w=d["prev_power"]["p_max_w"])
        return cls(
            channel_gain_power=np.asarray(d["channel_gain_power"]),
            semantic_fov=np.asarray(d["semantic_fov"]),
            prev_power=power,
            prev_cbr=np.asarray(d["prev_cbr"]),
            prev_common_alloc=np.asarray(d["prev_common_alloc"]),
            prev_private_rate=np.asarray(d["prev_private_rate"]),
            slot=int(d["slot"]),
        )


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward: float
    done: bool
    per_user: list[ScoreBreakdown]
    report: RateReport


def observation_layout(cfg: EnvConfig) -> list[tuple[str, int]]:
    """Ordered (name, length) blocks of the flattened observation vector."""
    u = cfg.num_users
    h, w = cfg.semantic_shape
    return [
        ("channel_gain", u),
        ("semantic_fov", u * h * w),
        ("power", 1 + u),
        ("cbr", u),
        ("common_alloc", u),
        ("private_rate", u),
    ]


def observation_dim(cfg: EnvConfig) -> int:
    return sum(length for _, length in observation_layout(cfg))


def raw_action_dim(cfg: EnvConfig) -> int:
    """Power block of 1 + U logits (the first doubles as the budget logit),
    then U cbr logits and U split logits."""
    return (1 + cfg.num_users) + cfg.num_users + cfg.num_users


def _stable_softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def project_action(cfg: EnvConfig, raw: np.ndarray) -> EnvAction:
    """Map an unconstrained raw vector onto the feasible action set.

    Stream powers are a softmax over the power block scaled by
    sigmoid(first power logit) * P_max, so the budget is never exceeded;
    shifting the whole block controls total power independently of the
    shares. Bandwidth ratios pass through a scaled sigmoid with a floor,
    and the common-rate split is a softmax (so the realized shares always
    resum to the cap).
    """
    raw = np.asarray(raw, dtype=float).ravel()
    u = cfg.num_users
    expected = raw_action_dim(cfg)
    if raw.shape != (expected,):
        raise ValueError(f"raw action length {raw.size}, expected {expected}")
    power_logits = raw[: 1 + u]
    cbr_logits = raw[1 + u: 1 + 2 * u]
    split_logits = raw[1 + 2 * u:]
    budget = float(_sigmoid(power_logits[0])) * cfg.power_budget_w
    shares = _stable_softmax(power_logits)
    powers = shares * budget
    alloc = PowerAllocation(common_w=float(powers[0]), private_w=powers[1:],
                            p_max_w=cfg.power_budget_w)
    cbr = np.clip(_sigmoid(cbr_logits) * cfg.o_max, cfg.o_floor, cfg.o_max)
    split = CommonRateSplit(_stable_softmax(split_logits))
    return EnvAction(power=alloc, cbr=cbr, common_split=split)


def scheme_rate_report(cfg: EnvConfig, state: ChannelState, action: EnvAction) -> RateReport:
    """Rates for the configured access scheme under one action.

    Baselines reuse the rate-splitting action: per-user power folds the
    common budget in equally, and OFDMA reads its band shares from the
    common-split fractions.
    """
    b = cfg.channel.bandwidth_hz
    if cfg.scheme == "RSMA":
        report = rates.rsma_rates(state, action.power, b)
        alloc = rates.split_common_rate(report.rate_common_cap, action.common_split)
        return rates.achievable_rates(report, alloc)
    per_user = action.power.private_w + action.power.common_w / cfg.num_users
    if cfg.scheme == "NOMA":
        return rates.baseline_rates(state, per_user, b, "NOMA",
                                    p_max_w=cfg.power_budget_w)
    return rates.baseline_rates(state, per_user, b, "OFDMA",
                                bandwidth_shares=action.common_split.fractions,
                                p_max_w=cfg.power_budget_w)


def effective_snr_db(rate_bps: float, bandwidth_hz: float) -> float:
    """SNR that a single full-band link would need for this rate, in dB.

    Inverts the Shannon rate so common and private contributions both reach
    the quality model; zero rate maps to -inf (noise floor).
    """
    if rate_bps <= 0.0:
        return -math.inf
    return 10.0 * math.log10(2.0 ** (rate_bps / bandwidth_hz) - 1.0)


class StreamingEnv:
    """Episodic environment; regenerates geometry, fading and viewports per episode."""

    def __init__(self, cfg: EnvConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        if cfg.fov_source != "synthetic" and cfg.trace is None:
            self.cfg = replace(cfg, trace=fov.load_head_trace(cfg.fov_source))
        self._episode = -1
        self._slot_states: list[ChannelState] = []
        self._viewports: list[list[Viewport]] = []
        self._deployment: UserDeployment | None = None
        self._fov_cache: dict[tuple, np.ndarray] = {}
        self._state: EnvState | None = None

    # -- episode machinery ------------------------------------------------

    @property
    def observation_dim(self) -> int:
        return observation_dim(self.cfg)

    @property
    def action_dim(self) -> int:
        return raw_action_dim(self.cfg)

    def project_action(self, raw: np.ndarray) -> EnvAction:
        return project_action(self.cfg, raw)

    def _episode_rng(self, episode: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence((self.seed, episode)))

    def _episode_viewports(self, episode: int, rng: np.random.Generator):
        cfg = self.cfg
        t = cfg.episode_len
        views: list[list[Viewport]] = []
        if cfg.trace is not None:
            trace = cfg.trace
            if len(trace) < t:
                raise ValueError(
                    f"trace has {len(trace)} samples, episode needs {t}"
                )
            span = len(trace) - t + 1
            stride = max(1, len(trace) // max(1, cfg.num_users))
            for u in range(cfg.num_users):
                start = (episode * t + u * stride) % span
                views.append([
                    trace.viewport(start + i, FOV_WIDTH_DEG, FOV_HEIGHT_DEG)
                    for i in range(t)
                ])
        else:
            for _ in range(cfg.num_users):
                trace = fov.synth_head_trace(rng, t * TRACE_DT_S, TRACE_DT_S)
                views.append([
                    trace.viewport(i, FOV_WIDTH_DEG, FOV_HEIGHT_DEG) for i in range(t)
                ])
        return views

    def _semantic_map(self, viewport: Viewport) -> np.ndarray:
        cfg = self.cfg
        key = fov.footprint_bounds(viewport, cfg.frame_h, cfg.frame_w)
        cached = self._fov_cache.get(key)
        if cached is None:
            footprint = fov.viewport_footprint(viewport, cfg.frame_h, cfg.frame_w)
            fmap = fov.build_fov_map(footprint, cfg.xi)
            cached = fov.pool_to_semantic(fmap)
            self._fov_cache[key] = cached
        return cached

    def _semantic_stack(self, local_slot: int) -> np.ndarray:
        return np.stack([
            self._semantic_map(self._viewports[u][local_slot])
            for u in range(self.cfg.num_users)
        ])

    def reset(self, episode: int = 0) -> EnvState:
        """Start episode ``episode``: fresh placement, fading and viewports.

        The initial allocation spreads the budget equally over the 1 + U
        streams with an equal common split and bandwidth ratio o_max / 2.
        """
        cfg = self.cfg
        rng = self._episode_rng(episode)
        self._episode = episode
        self._deployment = place_users(cfg.channel, rng)
        t = cfg.episode_len
        states = []
        prev = None
        for i in range(t + 1):  # one extra draw for the terminal observation
            prev = sample_channel(cfg.channel, self._deployment, prev=prev, seed=rng,
                                  slot_index=episode * t + i)
            states.append(prev)
        self._slot_states = states
        self._viewports = self._episode_viewports(episode, rng)
        self._fov_cache.clear()

        alloc = PowerAllocation.equal_split(cfg.power_budget_w, cfg.num_users)
        split = CommonRateSplit.equal(cfg.num_users)
        cbr = np.full(cfg.num_users, cfg.o_max / 2.0)
        action = EnvAction(power=alloc, cbr=cbr, common_split=split)
        report = scheme_rate_report(cfg, states[0], action)
        self._state = EnvState(
            channel_gain_power=states[0].gain_power.copy(),
            semantic_fov=self._semantic_stack(0),
            prev_power=alloc,
            prev_cbr=cbr,
            prev_common_alloc=report.common_alloc.copy(),
            prev_private_rate=report.rate_private.copy(),
            slot=episode * t,
        )
        return self._state

    def step(self, action: EnvAction) -> StepResult:
        """Advance one slot; reward is the mean of the users' total scores."""
        if self._state is None:
            raise RuntimeError("call reset() before step()")
        cfg = self.cfg
        problems = rates.validate_power(action.power)
        if problems:
            raise InfeasibleActionError("; ".join(problems))
        if np.any(action.cbr <= 0) or np.any(action.cbr > cfg.o_max):
            raise InfeasibleActionError("cbr outside (0, o_max]")

        t = cfg.episode_len
        local = self._state.slot - self._episode * t
        channel_state = self._slot_states[local]
        report = scheme_rate_report(cfg, channel_state, action)

        data_scale = 1.0
        if cfg.gop_n is not None and local % cfg.gop_n == 0:
            data_scale = cfg.gop_iframe_factor

        source_dims = cfg.frame_h * cfg.frame_w * 3
        breakdowns = []
        for u in range(cfg.num_users):
            k = round(float(action.cbr[u]) * source_dims)
            rate = float(report.rate_achievable[u])
            snr_eff = effective_snr_db(rate, cfg.channel.bandwidth_hz)
            q_db = eval_quality(cfg.quality_model, float(action.cbr[u]), snr_eff)
            breakdowns.append(
                qos.score_breakdown(cfg.qos, k, rate, q_db, data_scale=data_scale)
            )
        reward = float(np.mean([b.total for b in breakdowns]))

        done = local == t - 1
        next_local = local + 1
        next_channel = self._slot_states[next_local]
        fov_local = min(next_local, t - 1)
        next_state = EnvState(
            channel_gain_power=next_channel.gain_power.copy(),
            semantic_fov=self._semantic_stack(fov_local),
            prev_power=action.power,
            prev_cbr=np.asarray(action.cbr, dtype=float).copy(),
            prev_common_alloc=report.common_alloc.copy(),
            prev_private_rate=report.rate_private.copy(),
            slot=self._state.slot + 1,
        )
        self._state = next_state
        return StepResult(next_state=next_state, reward=reward, done=done,
                          per_user=breakdowns, report=report)

    # -- observation encoding ---------------------------------------------

    def observe(self, state: EnvState | None = None) -> np.ndarray:
        """Flatten a state into the documented observation vector."""
        cfg = self.cfg
        state = state if state is not None else self._state
        if state is None:
            raise RuntimeError("no state to observe")
        b = cfg.channel.bandwidth_hz
        gain_db = 10.0 * np.log10(np.maximum(state.channel_gain_power, 1e-12))
        gain_feat = (gain_db + GAIN_DB_OFFSET) / GAIN_DB_SPAN
        power = np.concatenate(([state.prev_power.common_w], state.prev_power.private_w))
        return np.concatenate([
            gain_feat,
            state.semantic_fov.ravel(),
            power / cfg.power_budget_w,
            state.prev_cbr / cfg.o_max,
            state.prev_common_alloc / b / SPECTRAL_EFF_SPAN,
            state.prev_private_rate / b / SPECTRAL_EFF_SPAN,
        ])


# -- episode traces ---------------------------------------------------------


def episode_trace_records(cfg: EnvConfig, seed: int, episode: int,
                          actions: list[EnvAction], results: list[StepResult],
                          config_hash: str = "") -> list[dict]:
    """JSON-lines records for one rolled-out episode (header first)."""
    records = [{
        "type": "header", "seed": seed, "episode": episode, "scheme": cfg.scheme,
        "episode_len": cfg.episode_len, "config_hash": config_hash,
    }]
    for i, (action, result) in enumerate(zip(actions, results)):
        records.append({
            "type": "slot", "slot": i,
            "power_common_w": action.power.common_w,
            "power_private_w": action.power.private_w.tolist(),
            "cbr": np.asarray(action.cbr).tolist(),
            "split": action.common_split.fractions.tolist(),
            "reward": result.reward,
            "done": result.done,
            "per_user": [b.to_dict() for b in result.per_user],
        })
    return records


def write_episode_trace(path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def read_episode_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay_episode_trace(path, cfg: EnvConfig) -> list[float]:
    """Re-run a stored episode; raises if any reward fails to reproduce."""
    records = read_episode_trace(path)
    header = records[0]
    if header.get("type") != "header":
        raise ValueError("trace does not start with a header record")
    env = StreamingEnv(cfg, seed=header["seed"])
    env.reset(episode=header["episode"])
    rewards = []
    for record in records[1:]:
        action = EnvAction(
            power=PowerAllocation(common_w=record["power_common_w"],
                                  private_w=np.asarray(record["power_private_w"]),
                                  p_max_w=cfg.power_budget_w),
            cbr=np.asarray(record["cbr"]),
            common_split=CommonRateSplit(np.asarray(record["split"])),
        )
        result = env.step(action)
        if result.reward != record["reward"]:
            raise ValueError(
                f"slot {record['slot']}: replayed reward {result.reward} "
                f"!= stored {record['reward']}"
            )
        rewards.append(result.reward)
    return rewards
