"""Uplink channel: SINR per device, decode-success probability, per-round draws."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ChannelConfig:
    tx_power: float = 0.1  # W
    path_loss_exp: float = 3.0
    noise_var: float = 1e-9  # W
    fading: str = "rayleigh"  # none | rayleigh
    subchannels: int = 10
    snr_threshold: float = 1.0
    bandwidth: float = 1e6  # Hz per subchannel, for the Shannon rate
    ema_decay: float = 0.9
    seed: int = 0

    def violations(self) -> list[str]:
        out = []
        if self.tx_power <= 0:
            out.append("tx_power must be > 0")
        if self.path_loss_exp <= 0:
            out.append("path_loss_exp must be > 0")
        if self.noise_var <= 0:
            out.append("noise_var must be > 0")
        if self.fading not in ("none", "rayleigh"):
            out.append(f"unknown fading {self.fading!r}")
        if self.subchannels < 1:
            out.append("subchannels must be >= 1")
        if self.snr_threshold <= 0:
            out.append("snr_threshold must be > 0")
        if self.bandwidth <= 0:
            out.append("bandwidth must be > 0")
        if not 0 <= self.ema_decay < 1:
            out.append("ema_decay must be in [0, 1)")
        return out

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))


@dataclass(frozen=True)
class DevicePlacement:
    device_id: int
    distance: float  # m
    interferers: tuple[float, ...] = ()  # distances of co-channel interferers, m

    def __post_init__(self):
        object.__setattr__(self, "interferers", tuple(float(d) for d in self.interferers))
        if self.distance <= 0 or any(d <= 0 for d in self.interferers):
            raise ValueError(f"device {self.device_id}: distances must be > 0")


@dataclass(frozen=True)
class ChannelDraw:
    device_id: int
    gain: float
    interferer_gains: tuple[float, ...]
    snr: float
    round: int


def snr(config: ChannelConfig, placement: DevicePlacement, gain: float = 1.0,
        interferer_gains=None) -> float:
    """P h d^-beta / (sum_c P h_c d_c^-beta + noise)."""
    if interferer_gains is None:
        interferer_gains = np.ones(len(placement.interferers))
    p, beta = config.tx_power, config.path_loss_exp
    interference = sum(p * h * d ** -beta for h, d in zip(interferer_gains, placement.interferers))
    return p * gain * placement.distance ** -beta / (interference + config.noise_var)


def shannon_rate(config: ChannelConfig, gamma) -> np.ndarray:
    """Achievable uplink rate in bit/s on one subchannel."""
    return config.bandwidth * np.log2(1.0 + np.asarray(gamma, dtype=np.float64))


def _draw_gains(config, rng, shape):
    if config.fading == "none":
        return np.ones(shape)
    return rng.exponential(1.0, size=shape)  # |h|^2 of unit-mean Rayleigh fading


def update_success_prob(config: ChannelConfig, placement: DevicePlacement, scheduled=1,
                        num_trials: int = 100_000, rng=None) -> float:
    """Estimate P(snr > threshold and scheduled).

    ``scheduled`` is either a constant 0/1 indicator or an array of one
    indicator per trial (drawn jointly with the fading trials by the caller,
    so dependence between scheduling and fading is preserved).
    """
    s = np.asarray(scheduled, dtype=np.float64)
    if s.ndim == 0:
        s = np.full(num_trials, float(s))
    elif len(s) != num_trials:
        raise ValueError(f"{len(s)} scheduling indicators for {num_trials} trials")
    if config.fading == "none":
        ok = snr(config, placement) > config.snr_threshold
        return float(ok) * float(s.mean())
    if num_trials < 1:
        raise ValueError("num_trials must be >= 1")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    h = _draw_gains(config, rng, num_trials)
    hc = _draw_gains(config, rng, (num_trials, len(placement.interferers)))
    p, beta = config.tx_power, config.path_loss_exp
    d_int = np.asarray(placement.interferers, dtype=np.float64)
    interference = (p * hc * d_int ** -beta).sum(axis=1) if d_int.size else 0.0
    gamma = p * h * placement.distance ** -beta / (interference + config.noise_var)
    return float(((gamma > config.snr_threshold) & (s > 0)).mean())


def rayleigh_success_closed_form(config: ChannelConfig, distance: float) -> float:
    """Exact success probability without interference: exp(-thr * noise * d^beta / P)."""
    return float(np.exp(-config.snr_threshold * config.noise_var * distance ** config.path_loss_exp
                        / config.tx_power))


def draw_round_channel(config: ChannelConfig, placements, t: int) -> list[ChannelDraw]:
    """Fading realisation for every device in round ``t``; a pure function of (seed, t)."""
    rng = np.random.default_rng([config.seed, t])
    draws = []
    for pl in placements:
        h = float(_draw_gains(config, rng, ()))
        hc = tuple(float(g) for g in _draw_gains(config, rng, len(pl.interferers)))
        draws.append(ChannelDraw(pl.device_id, h, hc, snr(config, pl, h, hc), t))
    return draws


def default_placements(num_devices: int, seed: int, lo: float = 10.0, hi: float = 100.0):
    rng = np.random.default_rng(seed)
    return [DevicePlacement(i, float(d)) for i, d in enumerate(rng.uniform(lo, hi, num_devices))]


@dataclass
class RoundChannel:
    draws: list[ChannelDraw]
    inst_snr: np.ndarray
    avg_snr: np.ndarray  # time average *before* this round's observation


@dataclass
class WirelessChannel:
    """Stateful wrapper owned by the round loop: per-round draws plus the SNR EMA.

    The average starts at the fading-free SNR so it is positive from round 0.
    """

    config: ChannelConfig
    placements: list[DevicePlacement]
    avg_snr: np.ndarray = field(init=False)

    def __post_init__(self):
        self.avg_snr = np.array([snr(self.config, p) for p in self.placements])

    def draw(self, t: int) -> RoundChannel:
        draws = draw_round_channel(self.config, self.placements, t)
        inst = np.array([d.snr for d in draws])
        prior = self.avg_snr.copy()
        a = self.config.ema_decay
        self.avg_snr = a * self.avg_snr + (1.0 - a) * inst
        return RoundChannel(draws, inst, prior)
