"""Downlink rate mathematics for rate-splitting, NOMA, and OFDMA.

Rate splitting superposes one common stream (decoded by everybody, then
cancelled) on per-user private streams that see each other as noise. The
common stream's rate is capped by the weakest decoder and split across users
by an allocation vector. Baselines: power-domain NOMA with successive
cancellation in ascending channel order, and OFDMA with disjoint band shares.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelState

SPLIT_SUM_TOL = 1e-9
POWER_SUM_TOL = 1e-9

SCHEMES = ("RSMA", "NOMA", "OFDMA")


@dataclass(frozen=True)
class PowerAllocation:
    """Per-slot transmit powers: one common stream plus one private per user."""

    common_w: float
    private_w: np.ndarray
    p_max_w: float

    def __post_init__(self):
        object.__setattr__(self, "private_w", np.asarray(self.private_w, dtype=float))

    @property
    def total_w(self) -> float:
        return float(self.common_w + self.private_w.sum())

    @classmethod
    def equal_split(cls, p_max_w: float, num_users: int) -> "PowerAllocation":
        per_stream = p_max_w / (num_users + 1)
        return cls(common_w=per_stream, private_w=np.full(num_users, per_stream),
                   p_max_w=p_max_w)


@dataclass(frozen=True)
class CommonRateSplit:
    """Nonnegative fractions of the common-rate cap, one per user, summing to 1."""

    fractions: np.ndarray

    def __post_init__(self):
        fractions = np.asarray(self.fractions, dtype=float)
        object.__setattr__(self, "fractions", fractions)
        if np.any(fractions < 0):
            raise ValueError("split fractions must be nonnegative")
        if abs(fractions.sum() - 1.0) > SPLIT_SUM_TOL:
            raise ValueError(f"split fractions sum to {fractions.sum()}, expected 1")

    @classmethod
    def equal(cls, num_users: int) -> "CommonRateSplit":
        return cls(np.full(num_users, 1.0 / num_users))


@dataclass(frozen=True)
class RateReport:
    """SINRs and rates for one slot under one access scheme.

    Produced in two stages for RSMA: ``rsma_rates`` fills the SINRs, per-user
    common rates, the cap, and private rates; ``achievable_rates`` completes
    ``common_alloc`` and ``rate_achievable``.
    """

    scheme: str
    sinr_common: np.ndarray
    sinr_private: np.ndarray
    rate_common_per_user: np.ndarray
    rate_common_cap: float
    rate_private: np.ndarray
    common_alloc: np.ndarray | None = None
    rate_achievable: np.ndarray | None = None

    @property
    def num_users(self) -> int:
        return len(self.sinr_private)

    @property
    def complete(self) -> bool:
        return self.rate_achievable is not None

    def to_dict(self) -> dict:
        d = {
            "scheme": self.scheme,
            "sinr_common": self.sinr_common.tolist(),
            "sinr_private": self.sinr_private.tolist(),
            "rate_common_per_user": self.rate_common_per_user.tolist(),
            "rate_common_cap": self.rate_common_cap,
            "rate_private": self.rate_private.tolist(),
        }
        if self.complete:
            d["common_alloc"] = self.common_alloc.tolist()
            d["rate_achievable"] = self.rate_achievable.tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def csv_rows(self, slot: int) -> list[list]:
        """Rows with header slot,user,scheme,sinr_c,sinr_p,r_c_user,r_c_cap,c_alloc,r_p,r_ach."""
        rows = []
        for u in range(self.num_users):
            rows.append([
                slot, u, self.scheme,
                float(self.sinr_common[u]), float(self.sinr_private[u]),
                float(self.rate_common_per_user[u]), float(self.rate_common_cap),
                float(self.common_alloc[u]) if self.complete else 0.0,
                float(self.rate_private[u]),
                float(self.rate_achievable[u]) if self.complete else float(self.rate_private[u]),
            ])
        return rows


RATE_CSV_HEADER = ["slot", "user", "scheme", "sinr_c", "sinr_p", "r_c_user",
                   "r_c_cap", "c_alloc", "r_p", "r_ach"]


def validate_power(alloc: PowerAllocation) -> list[str]:
    """Check the power budget; returns a list of violation messages (empty = ok)."""
    problems = []
    if alloc.common_w < 0:
        problems.append(f"common power {alloc.common_w} is negative")
    if np.any(alloc.private_w < 0):
        bad = np.flatnonzero(alloc.private_w < 0)
        problems.append(f"private power negative for users {bad.tolist()}")
    if alloc.p_max_w <= 0:
        problems.append(f"power budget {alloc.p_max_w} is not positive")
    total = alloc.total_w
    if total > alloc.p_max_w + POWER_SUM_TOL:
        problems.append(f"total power {total} exceeds budget {alloc.p_max_w}")
    return problems


def _shannon(bandwidth_hz: float, sinr) -> np.ndarray:
    return bandwidth_hz * np.log2(1.0 + np.asarray(sinr, dtype=float))


def rsma_rates(state: ChannelState, alloc: PowerAllocation, bandwidth_hz: float) -> RateReport:
    """SINRs and rates of the common and private streams (common not yet split).

    Common-stream SINR at user u treats every private stream as interference:
        g_u * p_c / (g_u * sum_k p_k + sigma^2).
    After the common stream is cancelled, the private SINR is
        g_u * p_u / (g_u * sum_{k != u} p_k + sigma^2).
    The common cap is the minimum common rate over users so everyone decodes.
    """
    problems = validate_power(alloc)
    if problems:
        raise ValueError("; ".join(problems))
    if len(alloc.private_w) != state.num_users:
        raise ValueError("allocation size does not match user count")
    g = state.gain_power
    sigma2 = state.noise_power_w
    private_sum = alloc.private_w.sum()
    sinr_common = g * alloc.common_w / (g * private_sum + sigma2)
    other = private_sum - alloc.private_w
    sinr_private = g * alloc.private_w / (g * other + sigma2)
    rate_common = _shannon(bandwidth_hz, sinr_common)
    rate_private = _shannon(bandwidth_hz, sinr_private)
    return RateReport(
        scheme="RSMA",
        sinr_common=sinr_common,
        sinr_private=sinr_private,
        rate_common_per_user=rate_common,
        rate_common_cap=float(rate_common.min()),
        rate_private=rate_private,
    )


def split_common_rate(cap: float, split: CommonRateSplit) -> np.ndarray:
    """Per-user shares of the common-rate cap; shares sum back to the cap."""
    if cap < 0:
        raise ValueError("common-rate cap must be nonnegative")
    return split.fractions * cap


def achievable_rates(report: RateReport, common_alloc: np.ndarray) -> RateReport:
    """Complete a report: per-user achievable rate = private rate + common share."""
    common_alloc = np.asarray(common_alloc, dtype=float)
    if len(common_alloc) != report.num_users:
        raise ValueError("allocation size does not match user count")
    if np.any(common_alloc < 0):
        raise ValueError("common allocations must be nonnegative")
    if abs(common_alloc.sum() - report.rate_common_cap) > max(
        1e-6, 1e-9 * max(report.rate_common_cap, 1.0)
    ):
        raise ValueError(
            f"common allocation sums to {common_alloc.sum()}, cap is {report.rate_common_cap}"
        )
    return replace(report, common_alloc=common_alloc,
                   rate_achievable=report.rate_private + common_alloc)


def baseline_rates(
    state: ChannelState,
    powers: np.ndarray,
    bandwidth_hz: float,
    scheme: str,
    bandwidth_shares: np.ndarray | None = None,
    p_max_w: float | None = None,
) -> RateReport:
    """Per-user rates for the NOMA or OFDMA baseline.

    NOMA: one stream per user over the full band; receivers cancel all weaker
    users (ascending channel power, ties broken by index), so interference
    comes only from stronger ones. OFDMA: user u gets a band share b_u with
    noise scaling as sigma^2 * b_u and no interference.
    """
    powers = np.asarray(powers, dtype=float)
    if len(powers) != state.num_users:
        raise ValueError("powers size does not match user count")
    if np.any(powers < 0):
        raise ValueError("powers must be nonnegative")
    if p_max_w is not None and powers.sum() > p_max_w + POWER_SUM_TOL:
        raise ValueError(f"total power {powers.sum()} exceeds budget {p_max_w}")
    g = state.gain_power
    sigma2 = state.noise_power_w
    n = state.num_users

    if scheme == "NOMA":
        order = np.lexsort((np.arange(n), g))  # ascending channel power
        rank = np.empty(n, dtype=int)
        rank[order] = np.arange(n)
        sinr = np.empty(n)
        for u in range(n):
            stronger = rank > rank[u]
            interference = g[u] * powers[stronger].sum()
            sinr[u] = g[u] * powers[u] / (interference + sigma2)
        rate = _shannon(bandwidth_hz, sinr)
    elif scheme == "OFDMA":
        if bandwidth_shares is None:
            raise ValueError("OFDMA requires bandwidth shares")
        shares = np.asarray(bandwidth_shares, dtype=float)
        if len(shares) != n:
            raise ValueError("shares size does not match user count")
        if np.any(shares < 0) or shares.sum() > 1.0 + SPLIT_SUM_TOL:
            raise ValueError("band shares must be nonnegative and sum to at most 1")
        noise_psd = sigma2 / bandwidth_hz
        sinr = np.zeros(n)
        rate = np.zeros(n)
        active = shares > 0
        sub_noise = noise_psd * shares[active] * bandwidth_hz
        sinr[active] = g[active] * powers[active] / sub_noise
        rate[active] = shares[active] * bandwidth_hz * np.log2(1.0 + sinr[active])
    else:
        raise ValueError(f"unknown baseline scheme {scheme!r}")

    zeros = np.zeros(n)
    return RateReport(
        scheme=scheme,
        sinr_common=zeros,
        sinr_private=sinr,
        rate_common_per_user=zeros,
        rate_common_cap=0.0,
        rate_private=rate,
        common_alloc=zeros,
        rate_achievable=rate,
    )
