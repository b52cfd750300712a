import numpy as np
import pytest
from scipy.optimize import brentq

from relaykf import (
    ChannelState,
    LinkProbabilities,
    PowerAllocation,
    SensorSpec,
    SystemModel,
    Topology,
    bpsk_success_probability,
    quantization_noise_factor,
)


@pytest.fixture
def topo21():
    """Two sensors, one relay hearing both."""
    return Topology.build(2, [(0, 1)])


@pytest.fixture
def topo22():
    """Two sensors, two relays, each hearing both."""
    return Topology.build(2, [(0, 1), (0, 1)])


def unit_scalar_model(a: float = 0.95, q: float = 1.0, b: int = 6,
                      num_sensors: int = 2) -> SystemModel:
    """Scalar process with unit-SNR sensors: the effective noise variance
    R + delta_b * y_power is exactly 1 by construction."""
    db = quantization_noise_factor(b)
    sensors = tuple(SensorSpec([1.0], 1.0 - db, 1.0) for _ in range(num_sensors))
    return SystemModel([[a]], [[q]], sensors, b)


def gain_for_probability(target: float, power: float = 1.0, b: int = 6) -> float:
    """Invert the reception law: the gain giving p(g*power) == target."""
    return brentq(
        lambda g: bpsk_success_probability(g, power, b) - target, 1e-12, 1e6
    )


def probs_21(lam1, lam2, lam_relay=1.0, rho1=1.0, rho2=1.0) -> LinkProbabilities:
    """Link probabilities for the two-sensor one-relay topology."""
    return LinkProbabilities(
        np.array([lam1, lam2]),
        np.array([lam_relay]),
        (np.array([rho1, rho2]),),
    )


def random_probs(rng: np.random.Generator, topology: Topology) -> LinkProbabilities:
    flat = rng.random(topology.num_links)
    return LinkProbabilities.from_flat(flat, topology)


def random_model(rng: np.random.Generator, num_sensors: int, n: int = 1) -> SystemModel:
    """Random stable model with explicit measurement powers."""
    A = rng.normal(size=(n, n))
    A *= 0.9 / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-6)
    G = rng.normal(size=(n, n))
    Q = G @ G.T + 0.5 * np.eye(n)
    sensors = []
    for _ in range(num_sensors):
        C = rng.normal(size=n)
        R = float(rng.uniform(0.2, 2.0))
        sensors.append(SensorSpec(C, R, R + float(rng.uniform(0.5, 5.0))))
    return SystemModel(A, Q, tuple(sensors), 6)


def random_topology(rng: np.random.Generator, max_relays: int = 4,
                    max_listen: int = 4) -> Topology:
    M = int(rng.integers(1, 6))
    L = int(rng.integers(0, max_relays + 1))
    hears = []
    for _ in range(L):
        size = int(rng.integers(1, min(M, max_listen) + 1))
        hears.append(tuple(rng.choice(M, size=size, replace=False)))
    return Topology.build(M, hears)


def equal_powers(topology: Topology, u_tot: float = 4.0) -> PowerAllocation:
    return PowerAllocation.equal_split(topology, u_tot)


def perfect_relay_state(direct_gains) -> ChannelState:
    """Channel state for topo21 with error-free relay-side links."""
    return ChannelState(
        np.asarray(direct_gains, dtype=float),
        np.array([np.inf]),
        (np.array([np.inf, np.inf]),),
    )
