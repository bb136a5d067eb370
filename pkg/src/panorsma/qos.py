"""Per-user service scoring: data size, transmission delay, and score aggregation.

A slot's payload is lambda bytes per codeword symbol times the codeword
dimension. Delay maps to [0, 1] through a logistic satisfaction curve that
drops to zero at the hard deadline; quality maps through min-max clamping.
The slot score weighs the two as kappa*F_T + (2-kappa)*F_Q, at most 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QosConfig:
    lambda_bytes: float = 4.0       # bytes per semantic codeword symbol
    zeta_per_s: float = 500.0       # steepness of the delay satisfaction curve
    t_max_s: float = 0.010          # hard latency deadline
    q_min_db: float = 20.0
    q_max_db: float = 35.0
    kappa: float = 1.0              # delay-vs-quality weight, in [0, 2]

    def __post_init__(self):
        if self.lambda_bytes <= 0 or self.zeta_per_s <= 0 or self.t_max_s <= 0:
            raise ValueError("lambda, zeta and t_max must be positive")
        if self.q_max_db <= self.q_min_db:
            raise ValueError("q_max must exceed q_min")
        if not 0.0 <= self.kappa <= 2.0:
            raise ValueError("kappa must lie in [0, 2]")


@dataclass(frozen=True)
class ScoreBreakdown:
    """All intermediate values behind one user's slot score."""

    data_bits: float
    delay_s: float
    delay_score: float
    quality_db: float
    quality_score: float
    total: float

    def to_dict(self) -> dict:
        return {
            "data_bits": self.data_bits, "delay_s": self.delay_s,
            "delay_score": self.delay_score, "quality_db": self.quality_db,
            "quality_score": self.quality_score, "total": self.total,
        }


SCORE_CSV_HEADER = ["slot", "user", "scheme", "data_bits", "delay_s", "f_t",
                    "q_db", "f_q", "total"]


def data_and_delay(cfg: QosConfig, codeword_dim: float, rate_bps: float):
    """(payload bits, transmission delay seconds) for one user-slot.

    Payload is 8 * lambda_bytes * k bits. Zero rate with a nonzero payload
    gives infinite delay; an empty payload takes no time at any rate.
    """
    if codeword_dim < 0:
        raise ValueError("codeword dimension must be nonnegative")
    if rate_bps < 0:
        raise ValueError("rate must be nonnegative")
    bits = 8.0 * cfg.lambda_bytes * codeword_dim
    if bits == 0.0:
        return 0.0, 0.0
    if rate_bps == 0.0:
        return bits, math.inf
    return bits, bits / rate_bps


def delay_score(cfg: QosConfig, delay_s: float) -> float:
    """Logistic satisfaction in [0, 1]; exactly 0 from the deadline onward."""
    if delay_s < 0:
        raise ValueError("delay must be nonnegative")
    if delay_s >= cfg.t_max_s:
        return 0.0
    x = cfg.zeta_per_s * (cfg.t_max_s - delay_s)
    return 1.0 / (1.0 + math.exp(-x))


def quality_score(cfg: QosConfig, quality_db: float) -> float:
    """Min-max quality satisfaction clamped to [0, 1]."""
    span = cfg.q_max_db - cfg.q_min_db
    return float(min(1.0, max(0.0, (quality_db - cfg.q_min_db) / span)))


def total_score(cfg: QosConfig, f_t: float, f_q: float) -> float:
    """kappa * F_T + (2 - kappa) * F_Q, in [0, 2] for scores in [0, 1]."""
    if not 0.0 <= f_t <= 1.0 or not 0.0 <= f_q <= 1.0:
        raise ValueError("component scores must lie in [0, 1]")
    return cfg.kappa * f_t + (2.0 - cfg.kappa) * f_q


def score_breakdown(cfg: QosConfig, codeword_dim: float, rate_bps: float,
                    quality_db: float, data_scale: float = 1.0) -> ScoreBreakdown:
    """Full scoring pipeline for one user-slot.

    ``data_scale`` multiplies the payload (used for independently coded frames
    at group-of-pictures boundaries).
    """
    bits, delay = data_and_delay(cfg, codeword_dim, rate_bps)
    bits *= data_scale
    delay *= data_scale
    f_t = delay_score(cfg, delay)
    f_q = quality_score(cfg, quality_db)
    return ScoreBreakdown(
        data_bits=bits, delay_s=delay, delay_score=f_t,
        quality_db=quality_db, quality_score=f_q,
        total=total_score(cfg, f_t, f_q),
    )


@dataclass(frozen=True)
class ScoreCdf:
    """Right-continuous empirical CDF over a score sample."""

    thresholds: np.ndarray  # ascending, unique
    fractions: np.ndarray   # cumulative fraction at each threshold

    def at(self, x: float) -> float:
        idx = np.searchsorted(self.thresholds, x, side="right")
        return 0.0 if idx == 0 else float(self.fractions[idx - 1])

    def __call__(self, x: float) -> float:
        return self.at(x)


def score_cdf(scores) -> ScoreCdf:
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("need at least one score")
    values, counts = np.unique(scores, return_counts=True)
    return ScoreCdf(thresholds=values, fractions=np.cumsum(counts) / scores.size)
