"""Experiment configuration: JSON with full defaulting and strict key checking.

Defaults reproduce the reference operating point: 6 users in a 20 m cell at
2.6 GHz over 200 MHz, -53 / -143 dBm/Hz transmit and noise densities,
960x1920 frames, a 10 ms deadline, and the published optimizer settings.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .channel import ChannelParams
from .env import EnvConfig
from .qos import QosConfig
from .quality import METRIC_KINDS, SurrogateModel, default_surrogate, load_model
from .rl.ppo import PpoConfig


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class SweepSpec:
    kappa: list[float] = field(default_factory=lambda: [0.5, 1.0, 1.5])
    bandwidth_hz: list[float] = field(default_factory=lambda: [100e6, 200e6, 400e6])
    t_max_s: list[float] = field(default_factory=lambda: [0.005, 0.010, 0.020])
    q_min_db: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    qos: QosConfig = field(default_factory=QosConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    env: dict = field(default_factory=dict)       # env-level overrides
    quality_kind: str = "ws_psnr"
    quality_model_path: str | None = None
    schemes: tuple[str, ...] = ("RSMA",)
    seed: int = 0
    eval_episodes: int = 5
    out_dir: str = "runs"
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def quality_model(self) -> SurrogateModel:
        if self.quality_model_path:
            return load_model(self.quality_model_path)
        return default_surrogate(self.quality_kind)

    def env_config(self, scheme: str | None = None) -> EnvConfig:
        overrides = dict(self.env)
        overrides.setdefault("scheme", self.schemes[0])
        if scheme is not None:
            overrides["scheme"] = scheme
        return EnvConfig(channel=self.channel, qos=self.qos,
                         quality_model=self.quality_model(), **overrides)

    def to_dict(self) -> dict:
        return {
            "channel": dataclasses.asdict(self.channel),
            "qos": dataclasses.asdict(self.qos),
            "ppo": dataclasses.asdict(self.ppo),
            "env": dict(self.env),
            "quality_kind": self.quality_kind,
            "quality_model_path": self.quality_model_path,
            "schemes": list(self.schemes),
            "seed": self.seed,
            "eval_episodes": self.eval_episodes,
            "out_dir": self.out_dir,
            "sweep": dataclasses.asdict(self.sweep),
        }

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


# Quality-score bounds per metric kind when not explicitly configured.
_QUALITY_BOUNDS = {"ws_psnr": (20.0, 35.0), "ws_ssim": (5.0, 13.0)}

_ENV_KEYS = {
    "o_max", "o_floor", "episode_len", "scheme", "xi", "frame_h", "frame_w",
    "p_max_w", "gop_n", "gop_iframe_factor", "fov_source",
}


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{section}' section: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    top_keys = {
        "channel", "qos", "ppo", "env", "quality_kind", "quality_model_path",
        "schemes", "seed", "eval_episodes", "out_dir", "sweep",
    }
    unknown = set(data) - top_keys
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")

    quality_kind = data.get("quality_kind", "ws_psnr")
    if quality_kind not in METRIC_KINDS:
        raise ConfigError(f"unknown quality_kind {quality_kind!r}")

    qos_data = dict(data.get("qos", {}))
    bounds = _QUALITY_BOUNDS[quality_kind]
    qos_data.setdefault("q_min_db", bounds[0])
    qos_data.setdefault("q_max_db", bounds[1])

    env_data = dict(data.get("env", {}))
    unknown_env = set(env_data) - _ENV_KEYS
    if unknown_env:
        raise ConfigError(f"unknown key(s) in 'env': {sorted(unknown_env)}")

    schemes = tuple(data.get("schemes", ["RSMA"]))
    for scheme in schemes:
        if scheme not in ("RSMA", "NOMA", "OFDMA"):
            raise ConfigError(f"unknown scheme {scheme!r} in 'schemes'")

    cfg = ExperimentConfig(
        channel=_build_section(ChannelParams, data.get("channel", {}), "channel"),
        qos=_build_section(QosConfig, qos_data, "qos"),
        ppo=_build_section(PpoConfig, data.get("ppo", {}), "ppo"),
        env=env_data,
        quality_kind=quality_kind,
        quality_model_path=data.get("quality_model_path"),
        schemes=schemes,
        seed=int(data.get("seed", 0)),
        eval_episodes=int(data.get("eval_episodes", 5)),
        out_dir=str(data.get("out_dir", "runs")),
        sweep=_build_section(SweepSpec, data.get("sweep", {}), "sweep"),
    )
    try:
        # Fail fast on bad env overrides without touching any model file.
        EnvConfig(channel=cfg.channel, qos=cfg.qos,
                  quality_model=default_surrogate(quality_kind), **env_data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'env' section: {exc}") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(data)
