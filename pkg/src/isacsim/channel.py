"""mmWave line-of-sight channel, ULA steering vectors, OFDMA subcarrier plans and SINR."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

LIGHT_SPEED = 3e8


class SubcarrierOverload(ValueError):
    """More vehicles requested service than there are subcarriers."""


def dbm_to_watt(dbm: float) -> float:
    return 10 ** ((dbm - 30) / 10)


def steering_vector(theta: float, n: int, side: str = "tx") -> np.ndarray:
    """Half-wavelength ULA response; entry m is exp(-j*pi*m*cos(theta))/sqrt(n)."""
    if n < 1:
        raise ValueError("array needs at least one antenna")
    if side not in ("tx", "rx"):
        raise ValueError(f"side must be 'tx' or 'rx', got {side!r}")
    m = np.arange(n)
    return np.exp(-1j * np.pi * m * math.cos(theta)) / math.sqrt(n)


def steering_derivative(theta: float, n: int) -> np.ndarray:
    """d a(theta) / d theta."""
    m = np.arange(n)
    return 1j * np.pi * m * math.sin(theta) * steering_vector(theta, n)


def channel_coefficient(d: float, gain_ref: float = 1.0, carrier: float = 28e9,
                        c: float = LIGHT_SPEED) -> complex:
    if d <= 0:
        raise ValueError("distance must be positive")
    phase = 2 * math.pi * math.fmod(carrier / c * d, 1.0)
    return complex(gain_ref / d * math.cos(phase), gain_ref / d * math.sin(phase))


@dataclass(frozen=True)
class RsuConfig:
    id: int
    x: float
    y: float
    height: float = 15.0
    n_antennas: int = 8
    p_max: float = 0.2  # W

    def distance(self, x: float, y: float) -> float:
        return math.sqrt((x - self.x) ** 2 + (y - self.y) ** 2 + self.height ** 2)

    def azimuth(self, x: float, y: float) -> float:
        # array axis runs along the road (+x)
        return math.atan2(y - self.y, x - self.x)


def effective_channel(d: float, theta: float, n: int, gain_ref: float = 1.0,
                      carrier: float = 28e9, c: float = LIGHT_SPEED) -> np.ndarray:
    """Equivalent channel h with h^H f = sqrt(n) * coef * a^H(theta) f."""
    coef = channel_coefficient(d, gain_ref, carrier, c)
    return math.sqrt(n) * np.conj(coef) * steering_vector(theta, n)


def conjugate_beamformer(h: np.ndarray, power: float) -> np.ndarray:
    norm = np.linalg.norm(h)
    if norm == 0:
        raise ValueError("zero channel has no conjugate beam")
    if power <= 0:
        raise ValueError("power must be positive")
    return math.sqrt(power) * h / norm


@dataclass
class SubcarrierPlan:
    """Vehicle -> subcarrier map for one RSU. Subcarriers are numbered 1..K."""

    n_subcarriers: int
    bandwidth: float = 5e6
    assignment: dict[int, int] = field(default_factory=dict)

    def subcarrier_of(self, vid: int):
        return self.assignment.get(vid)

    @property
    def total_bandwidth(self) -> float:
        return self.n_subcarriers * self.bandwidth


def assign_subcarriers(served: Sequence[int], n_subcarriers: int,
                       total_bandwidth: float = 20e6) -> SubcarrierPlan:
    """Round-robin by ascending id; each subcarrier used at most once within the RSU."""
    ids = sorted(set(served))
    if len(ids) > n_subcarriers:
        raise SubcarrierOverload(f"{len(ids)} vehicles for {n_subcarriers} subcarriers")
    return SubcarrierPlan(n_subcarriers=n_subcarriers,
                          bandwidth=total_bandwidth / n_subcarriers,
                          assignment={v: k for k, v in enumerate(ids, start=1)})


def cluster(x: float, y: float, rsus: Sequence[RsuConfig], size: int) -> list[int]:
    """Ids of the ``size`` RSUs with the strongest large-scale gain (nearest first, ties by id)."""
    if size > len(rsus):
        raise ValueError("cluster larger than the RSU set")
    ranked = sorted(rsus, key=lambda r: (r.distance(x, y), r.id))
    return [r.id for r in ranked[:size]]


Channels = Mapping[tuple[int, int], np.ndarray]   # (rsu, vehicle) -> h
Beams = Mapping[tuple[int, int], np.ndarray]      # (rsu, vehicle) -> f


def _serving(vid: int, k: int, plans: Mapping[int, SubcarrierPlan]) -> list[int]:
    return sorted(r for r, p in plans.items() if p.subcarrier_of(vid) == k)


def sinr(vid: int, k: int, channels: Channels, beams: Beams,
         plans: Mapping[int, SubcarrierPlan], noise: float) -> float:
    """SINR of ``vid`` on subcarrier ``k``.

    Interference comes from every other vehicle scheduled on ``k`` by any RSU and
    reaches ``vid`` through ``vid``'s own channels.
    """
    serving = _serving(vid, k, plans)
    if not serving:
        raise ValueError(f"vehicle {vid} is not scheduled on subcarrier {k}")
    desired = sum(np.vdot(channels[(r, vid)], beams[(r, vid)]) for r in serving)
    others = sorted({v for p in plans.values() for v, kk in p.assignment.items()
                     if kk == k and v != vid})
    interference = 0.0
    for other in others:
        amp = sum(np.vdot(channels[(r, vid)], beams[(r, other)])
                  for r in _serving(other, k, plans))
        interference += abs(amp) ** 2
    return float(abs(desired) ** 2 / (interference + noise))


def rate(sinr_value: float) -> float:
    if sinr_value < 0:
        raise ValueError("SINR must be non-negative")
    return math.log2(1.0 + sinr_value)


def vehicle_rate(vid: int, channels: Channels, beams: Beams,
                 plans: Mapping[int, SubcarrierPlan], noise: float) -> float:
    """Sum over the vehicle's subcarriers of log2(1 + SINR)."""
    ks = sorted({p.subcarrier_of(vid) for p in plans.values()} - {None})
    return sum(rate(sinr(vid, k, channels, beams, plans, noise)) for k in ks)


def sum_rate_ok(vid: int, channels: Channels, beams: Beams,
                plans: Mapping[int, SubcarrierPlan], noise: float, minimum: float) -> bool:
    return vehicle_rate(vid, channels, beams, plans, noise) >= minimum


def frobenius_power(columns: Sequence[np.ndarray]) -> float:
    return float(sum(np.vdot(f, f).real for f in columns))
