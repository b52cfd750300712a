"""Block-fading links and packet reception probabilities.

Links come in three groups: sensor-to-gateway, relay-to-gateway, and
sensor-to-relay (one per sensor a relay listens to). Gains are i.i.d.
across time steps. The probability that a packet crosses a link is a
monotone function of gain times transmit power; the default law is
uncoded BPSK with b bits per packet, Phi(sqrt(g*u))**b.

Flat layouts used throughout the package order links as: the M direct
links, the L relay uplinks, then the listening links grouped by relay in
listening order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Topology",
    "LinkFading",
    "FadingSpec",
    "ChannelState",
    "PowerAllocation",
    "LinkProbabilities",
    "bpsk_success_probability",
    "sample_channel_state",
    "link_probabilities",
]


@dataclass(frozen=True)
class Topology:
    """Sensor count, relay count, and the sensors each relay can hear."""

    num_sensors: int
    num_relays: int
    hears: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        M, L = self.num_sensors, self.num_relays
        if M < 1:
            raise ValueError("need at least one sensor")
        if L < 0 or len(self.hears) != L:
            raise ValueError("hears must list one sensor set per relay")
        norm = []
        for l, group in enumerate(self.hears):
            g = tuple(sorted(set(int(i) for i in group)))
            if not g:
                raise ValueError(f"relay {l} must hear at least one sensor")
            if g[0] < 0 or g[-1] >= M:
                raise ValueError(f"relay {l} hears sensors outside 0..{M - 1}: {g}")
            norm.append(g)
        object.__setattr__(self, "hears", tuple(norm))

    @classmethod
    def build(cls, num_sensors: int, hears=()) -> "Topology":
        hears = tuple(tuple(g) for g in hears)
        return cls(num_sensors, len(hears), hears)

    @property
    def listen_counts(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.hears)

    @property
    def num_links(self) -> int:
        return self.num_sensors + self.num_relays + sum(self.listen_counts)

    def hear_offset(self, relay: int) -> int:
        """Flat-layout index of relay ``relay``'s first listening link."""
        return (
            self.num_sensors
            + self.num_relays
            + sum(len(g) for g in self.hears[:relay])
        )


_FAMILIES = ("constant", "exponential", "perfect")


@dataclass(frozen=True)
class LinkFading:
    """Gain distribution of one link.

    constant: fixed gain ``mean``; exponential: i.i.d. Exponential with
    the given mean (Rayleigh-fading power gain); perfect: an error-free
    link whose packets always arrive, regardless of transmit power.
    """

    family: str = "exponential"
    mean: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown fading family {self.family!r}")
        if self.family != "perfect" and not (self.mean > 0.0):
            raise ValueError("link gain mean must be strictly positive")

    def sample(self, rng: np.random.Generator, size=None):
        if self.family == "constant":
            return np.full(size, self.mean) if size is not None else self.mean
        if self.family == "perfect":
            return np.full(size, np.inf) if size is not None else np.inf
        return rng.exponential(self.mean, size)


@dataclass(frozen=True)
class FadingSpec:
    """Per-link fading families, grouped like the flat link layout."""

    sensor_to_gateway: tuple[LinkFading, ...]
    relay_to_gateway: tuple[LinkFading, ...]
    sensor_to_relay: tuple[tuple[LinkFading, ...], ...]

    @classmethod
    def uniform(
        cls,
        topology: Topology,
        direct: LinkFading = LinkFading(),
        relay: LinkFading = LinkFading(),
        hear: LinkFading = LinkFading(),
    ) -> "FadingSpec":
        """One family per link group, replicated over the topology."""
        return cls(
            (direct,) * topology.num_sensors,
            (relay,) * topology.num_relays,
            tuple((hear,) * m for m in topology.listen_counts),
        )

    def validate_for(self, topology: Topology) -> None:
        if len(self.sensor_to_gateway) != topology.num_sensors:
            raise ValueError("one fading spec per sensor-to-gateway link required")
        if len(self.relay_to_gateway) != topology.num_relays:
            raise ValueError("one fading spec per relay-to-gateway link required")
        if tuple(len(g) for g in self.sensor_to_relay) != topology.listen_counts:
            raise ValueError("sensor-to-relay fading specs must match the listening sets")

    def flat(self) -> tuple[LinkFading, ...]:
        out = list(self.sensor_to_gateway) + list(self.relay_to_gateway)
        for group in self.sensor_to_relay:
            out.extend(group)
        return tuple(out)


def _frozen_vec(values) -> np.ndarray:
    a = np.atleast_1d(np.asarray(values, dtype=float))
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ChannelState:
    """All instantaneous channel gains for one time step."""

    direct: np.ndarray
    relay: np.ndarray
    hear: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "direct", _frozen_vec(self.direct))
        object.__setattr__(self, "relay", _frozen_vec(self.relay))
        object.__setattr__(self, "hear", tuple(_frozen_vec(h) for h in self.hear))
        for a in (self.direct, self.relay, *self.hear):
            if a.size and np.min(a) < 0.0:
                raise ValueError("channel gains must be nonnegative")

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.direct, self.relay, *self.hear]) if self.hear \
            else np.concatenate([self.direct, self.relay])

    @classmethod
    def from_flat(cls, values, topology: Topology) -> "ChannelState":
        v = np.asarray(values, dtype=float)
        if v.shape != (topology.num_links,):
            raise ValueError(
                f"expected {topology.num_links} gains, got shape {v.shape}"
            )
        M, L = topology.num_sensors, topology.num_relays
        hear = []
        ofs = M + L
        for m in topology.listen_counts:
            hear.append(v[ofs:ofs + m])
            ofs += m
        return cls(v[:M], v[M:M + L], tuple(hear))


@dataclass(frozen=True, eq=False)
class PowerAllocation:
    """Transmit powers: one per sensor, one per relay."""

    sensors: np.ndarray
    relays: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sensors", _frozen_vec(self.sensors))
        object.__setattr__(self, "relays", _frozen_vec(self.relays))
        for a in (self.sensors, self.relays):
            if a.size and np.min(a) < 0.0:
                raise ValueError("transmit powers must be nonnegative")

    @property
    def total(self) -> float:
        return float(np.sum(self.sensors) + np.sum(self.relays))

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.sensors, self.relays])

    @classmethod
    def from_flat(cls, values, topology: Topology) -> "PowerAllocation":
        v = np.asarray(values, dtype=float)
        M = topology.num_sensors
        if v.shape != (M + topology.num_relays,):
            raise ValueError("power vector length must be num_sensors + num_relays")
        return cls(v[:M], v[M:])

    @classmethod
    def equal_split(cls, topology: Topology, u_tot: float) -> "PowerAllocation":
        share = float(u_tot) / (topology.num_sensors + topology.num_relays)
        return cls(
            np.full(topology.num_sensors, share),
            np.full(topology.num_relays, share),
        )

    def per_link(self, topology: Topology) -> np.ndarray:
        """Power seen by each link in flat layout. A sensor's single
        broadcast power feeds both its direct link and every relay that
        listens to it."""
        hear = [self.sensors[list(g)] for g in topology.hears]
        return np.concatenate([self.sensors, self.relays, *hear]) if hear \
            else np.concatenate([self.sensors, self.relays])


@dataclass(frozen=True, eq=False)
class LinkProbabilities:
    """Packet reception probability of every link at one time step."""

    direct: np.ndarray
    relay: np.ndarray
    hear: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "direct", _frozen_vec(self.direct))
        object.__setattr__(self, "relay", _frozen_vec(self.relay))
        object.__setattr__(self, "hear", tuple(_frozen_vec(h) for h in self.hear))
        for a in (self.direct, self.relay, *self.hear):
            if a.size and (np.min(a) < -1e-12 or np.max(a) > 1.0 + 1e-12):
                raise ValueError("link probabilities must lie in [0, 1]")

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.direct, self.relay, *self.hear]) if self.hear \
            else np.concatenate([self.direct, self.relay])

    @classmethod
    def from_flat(cls, values, topology: Topology) -> "LinkProbabilities":
        s = ChannelState.from_flat(np.clip(values, 0.0, 1.0), topology)
        return cls(s.direct, s.relay, s.hear)


def bpsk_success_probability(gain, power, b: int):
    """Probability that a b-bit uncoded BPSK packet crosses the link.

    Phi(sqrt(gain*power))**b with Phi the standard normal CDF; continuous
    and increasing in gain*power, with value (1/2)**b at zero. Links with
    infinite gain are error free and return 1 for any power.
    """
    if int(b) != b or b < 1:
        raise ValueError("bits per packet must be a positive integer")
    g = np.asarray(gain, dtype=float)
    u = np.asarray(power, dtype=float)
    if g.size and np.min(g) < 0.0:
        raise ValueError("gain must be nonnegative")
    if u.size and np.min(u) < 0.0:
        raise ValueError("power must be nonnegative")
    with np.errstate(invalid="ignore"):
        gu = np.where(np.isinf(g), np.inf, g * u)
    p = ndtr(np.sqrt(gu)) ** int(b)
    if np.ndim(gain) == 0 and np.ndim(power) == 0:
        return float(p)
    return p


def sample_channel_state(
    spec: FadingSpec, topology: Topology, rng: int | np.random.Generator
) -> ChannelState:
    """One independent draw of every link gain, in flat layout order."""
    spec.validate_for(topology)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    flat = np.array([f.sample(rng) for f in spec.flat()], dtype=float)
    return ChannelState.from_flat(flat, topology)


def link_probabilities(
    state: ChannelState,
    powers: PowerAllocation,
    topology: Topology,
    b: int,
) -> LinkProbabilities:
    """Map every gain/power pair through the BPSK reception law."""
    if state.direct.shape != (topology.num_sensors,) or \
            state.relay.shape != (topology.num_relays,):
        raise ValueError("channel state does not match the topology")
    if powers.sensors.shape != (topology.num_sensors,) or \
            powers.relays.shape != (topology.num_relays,):
        raise ValueError("power allocation does not match the topology")
    flat_p = bpsk_success_probability(state.flat, powers.per_link(topology), b)
    return LinkProbabilities.from_flat(flat_p, topology)
