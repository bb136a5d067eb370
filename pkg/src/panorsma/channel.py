"""Single-cell downlink channel model: user geometry, path loss, Rayleigh fading, noise.

Users are dropped uniformly over a disk around the base station (Poisson
scattering conditioned on a fixed user count). Per-slot complex gains combine
a log-distance path loss with unit-variance Rayleigh fading, optionally
correlated across slots through a Gauss-Markov recursion.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

# Distance floor (meters); keeps the path-loss log bounded near the mast.
D_MIN_M = 1.0


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts <= 0.0:
        raise ValueError("power must be positive to express in dBm")
    return 10.0 * math.log10(watts) + 30.0


@dataclass(frozen=True)
class ChannelParams:
    """Static deployment parameters for one cell."""

    carrier_freq_ghz: float = 2.6
    bandwidth_hz: float = 200e6
    cell_radius_m: float = 20.0
    tx_psd_dbm_hz: float = -53.0
    noise_psd_dbm_hz: float = -143.0
    num_users: int = 6
    fading_correlation: float = 0.0

    def __post_init__(self):
        if self.carrier_freq_ghz <= 0 or self.bandwidth_hz <= 0 or self.cell_radius_m <= 0:
            raise ValueError("frequency, bandwidth and radius must be positive")
        if self.num_users < 1:
            raise ValueError("need at least one user")
        if not 0.0 <= self.fading_correlation < 1.0:
            raise ValueError("fading_correlation must lie in [0, 1)")

    @property
    def noise_power_w(self) -> float:
        """Receiver noise power over the full band, watts."""
        return dbm_to_watts(self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz))

    @property
    def tx_power_dbm(self) -> float:
        """Total transmit power implied by the PSD over the full band, dBm."""
        return self.tx_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)

    @property
    def tx_power_w(self) -> float:
        return dbm_to_watts(self.tx_power_dbm)


@dataclass(frozen=True)
class UserDeployment:
    """User positions (meters, relative to the base station) for one episode."""

    positions: np.ndarray  # (n, 2)
    distances: np.ndarray  # (n,)

    def __post_init__(self):
        if self.positions.shape != (len(self.distances), 2):
            raise ValueError("positions/distances shape mismatch")

    @property
    def num_users(self) -> int:
        return len(self.distances)


@dataclass(frozen=True)
class ChannelState:
    """Per-slot complex gains h_u and full-band noise power."""

    gains: np.ndarray        # complex, (n,)
    gain_power: np.ndarray   # |h_u|^2, (n,)
    noise_power_w: float
    slot_index: int = 0
    fading: np.ndarray | None = None  # unit-variance small-scale component, (n,)

    def __post_init__(self):
        if self.noise_power_w <= 0:
            raise ValueError("noise power must be positive")

    @property
    def num_users(self) -> int:
        return len(self.gains)


def place_users(params: ChannelParams, seed) -> UserDeployment:
    """Drop users i.i.d. uniformly over the cell disk, deterministic per seed.

    Radial distances below D_MIN_M are clamped up to the floor so the
    path-loss model stays defined.
    """
    rng = np.random.default_rng(seed)
    n = params.num_users
    radius = np.sqrt(rng.uniform(0.0, 1.0, n)) * params.cell_radius_m
    radius = np.maximum(radius, D_MIN_M)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    positions = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    return UserDeployment(positions=positions, distances=radius)


def path_loss_db(fc_ghz: float, d_m: float):
    """Log-distance path loss: 32.4 + 20 log10(f_GHz) + 21 log10(d_m)."""
    fc_ghz = np.asarray(fc_ghz, dtype=float)
    d_m = np.asarray(d_m, dtype=float)
    if np.any(fc_ghz <= 0.0):
        raise ValueError("carrier frequency must be positive")
    if np.any(d_m < D_MIN_M):
        raise ValueError(f"distance below the {D_MIN_M} m floor")
    out = 32.4 + 20.0 * np.log10(fc_ghz) + 21.0 * np.log10(d_m)
    return float(out) if out.ndim == 0 else out


def sample_channel(
    params: ChannelParams,
    deployment: UserDeployment,
    prev: ChannelState | None = None,
    seed=None,
    slot_index: int = 0,
) -> ChannelState:
    """Draw one slot of complex gains h_u = h'_u * 10^(-PL_u/20).

    h' is circularly symmetric complex Gaussian with unit variance. When a
    previous state is given and fading_correlation rho > 0, the small-scale
    component follows h'_t = rho*h'_{t-1} + sqrt(1-rho^2)*innovation.

    ``seed`` may be an int, a SeedSequence, or a Generator (reused across
    calls for a correlated slot sequence).
    """
    if deployment.num_users != params.num_users:
        raise ValueError("deployment size does not match num_users")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = params.num_users
    innovation = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    rho = params.fading_correlation
    if prev is not None and rho > 0.0:
        if prev.fading is None or len(prev.fading) != n:
            raise ValueError("previous state lacks a matching fading component")
        fading = rho * prev.fading + math.sqrt(1.0 - rho * rho) * innovation
    else:
        fading = innovation
    amplitude = 10.0 ** (-path_loss_db(params.carrier_freq_ghz, deployment.distances) / 20.0)
    gains = fading * amplitude
    return ChannelState(
        gains=gains,
        gain_power=np.abs(gains) ** 2,
        noise_power_w=params.noise_power_w,
        slot_index=slot_index,
        fading=fading,
    )


def snr_db(state: ChannelState, tx_power_w: float, user: int) -> float:
    """Received SNR for one user at the given transmit power, in dB.

    Returns -inf for zero transmit power.
    """
    if not 0 <= user < state.num_users:
        raise IndexError(f"user index {user} out of range")
    if tx_power_w < 0:
        raise ValueError("transmit power must be nonnegative")
    if tx_power_w == 0.0:
        return float("-inf")
    return 10.0 * math.log10(state.gain_power[user] * tx_power_w / state.noise_power_w)


def export_channel_trace(
    path,
    params: ChannelParams,
    deployment: UserDeployment,
    states: list[ChannelState],
) -> None:
    """Write a slot-by-user CSV of the deployment and gain sequence."""
    pl = path_loss_db(params.carrier_freq_ghz, deployment.distances)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["slot", "user", "distance_m", "path_loss_db", "gain_re", "gain_im",
             "gain_power", "noise_power_w"]
        )
        for state in states:
            for u in range(state.num_users):
                writer.writerow(
                    [state.slot_index, u, repr(float(deployment.distances[u])),
                     repr(float(pl[u])), repr(float(state.gains[u].real)),
                     repr(float(state.gains[u].imag)), repr(float(state.gain_power[u])),
                     repr(state.noise_power_w)]
                )
