"""Relay operations, GF(2) decodability, and reconstruction-pattern laws.

A relay operation is a nonempty subset of the sensors a relay listens
to: a singleton means the relay forwards that packet, a larger set means
it transmits the bitwise XOR of the packets. The relay stays silent
unless it heard every packet in its set. The gateway can reconstruct
measurement i exactly when the unit vector e_i lies in the GF(2) row
space spanned by the coding vectors of the packets it received, which is
decided by Gaussian elimination over Z2 (on bitmask words here).

Two independent routes compute the law of the reconstruction pattern:

* ``pattern_distribution`` enumerates direct receptions jointly with
  per-relay delivery events (relay uplink up and all listened packets
  heard). These 2**(M+L) events are disjoint and have product-form
  probabilities, so the sum is exact.
* ``enumerate_outcomes_oracle`` brute-forces all 2**N raw link outcomes
  and decodes each one; it is the reference the fast route is tested
  against.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import LinkProbabilities, Topology

__all__ = [
    "RelayOperation",
    "RelayConfig",
    "LinkOutcome",
    "PatternDistribution",
    "BooleanExpression",
    "recover_measurements",
    "theta_expression_table",
    "pattern_distribution",
    "pattern_distribution_from_rates",
    "pattern_distribution_batch",
    "pattern_lookup",
    "enumerate_outcomes_oracle",
    "enumerate_configs",
    "count_configs",
    "relay_operations",
]

_MAX_COMBO_NODES = 20  # 2**(M+L) table guard
_MAX_ORACLE_LINKS = 24


@dataclass(frozen=True)
class RelayOperation:
    """The set of sensor packets one relay combines into its transmission."""

    sensors: tuple[int, ...]

    def __post_init__(self):
        s = tuple(sorted(set(int(i) for i in self.sensors)))
        if not s:
            raise ValueError("a relay operation must involve at least one sensor")
        object.__setattr__(self, "sensors", s)

    @staticmethod
    def forward(sensor: int) -> "RelayOperation":
        return RelayOperation((sensor,))

    @staticmethod
    def xor(sensors) -> "RelayOperation":
        op = RelayOperation(tuple(sensors))
        if len(op.sensors) < 2:
            raise ValueError("an XOR operation needs at least two sensors")
        return op

    @property
    def is_forward(self) -> bool:
        return len(self.sensors) == 1

    @property
    def mask(self) -> int:
        """GF(2) coding vector of the transmitted packet, as a bitmask."""
        m = 0
        for i in self.sensors:
            m |= 1 << i
        return m

    def validate_for(self, topology: Topology, relay: int) -> None:
        heard = set(topology.hears[relay])
        if not set(self.sensors) <= heard:
            raise ValueError(
                f"relay {relay} cannot operate on sensors {self.sensors}; "
                f"it hears {tuple(sorted(heard))}"
            )


@dataclass(frozen=True)
class RelayConfig:
    """One operation per relay."""

    operations: tuple[RelayOperation, ...]

    def __post_init__(self):
        object.__setattr__(self, "operations", tuple(self.operations))

    def __len__(self) -> int:
        return len(self.operations)

    def validate_for(self, topology: Topology) -> None:
        if len(self.operations) != topology.num_relays:
            raise ValueError(
                f"configuration has {len(self.operations)} operations for "
                f"{topology.num_relays} relays"
            )
        for l, op in enumerate(self.operations):
            op.validate_for(topology, l)


def _frozen_bool(a) -> np.ndarray:
    out = np.atleast_1d(np.asarray(a, dtype=bool))
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class LinkOutcome:
    """Realized packet successes for every link at one time step."""

    direct: np.ndarray
    relay: np.ndarray
    hear: tuple[np.ndarray, ...]
    topology: Topology

    def __post_init__(self):
        object.__setattr__(self, "direct", _frozen_bool(self.direct))
        object.__setattr__(self, "relay", _frozen_bool(self.relay))
        object.__setattr__(self, "hear", tuple(_frozen_bool(h) for h in self.hear))
        t = self.topology
        if self.direct.shape != (t.num_sensors,) or self.relay.shape != (t.num_relays,):
            raise ValueError("outcome shape does not match the topology")
        if tuple(h.shape[0] for h in self.hear) != t.listen_counts:
            raise ValueError("listening outcomes do not match the topology")

    @property
    def flat(self) -> np.ndarray:
        parts = [self.direct, self.relay, *self.hear]
        return np.concatenate(parts) if self.hear else np.concatenate(parts[:2])

    @classmethod
    def from_flat(cls, bits, topology: Topology) -> "LinkOutcome":
        v = np.asarray(bits, dtype=bool)
        if v.shape != (topology.num_links,):
            raise ValueError(f"expected {topology.num_links} link outcomes")
        M, L = topology.num_sensors, topology.num_relays
        hear, ofs = [], M + L
        for m in topology.listen_counts:
            hear.append(v[ofs:ofs + m])
            ofs += m
        return cls(v[:M], v[M:M + L], tuple(hear), topology)

    def heard(self, relay: int, sensor: int) -> bool:
        return bool(self.hear[relay][self.topology.hears[relay].index(sensor)])


# ---------------------------------------------------------------------------
# GF(2) elimination on bitmask words
# ---------------------------------------------------------------------------

def _gf2_basis(vectors) -> dict[int, int]:
    """Row-echelon basis over GF(2), keyed by leading bit position."""
    basis: dict[int, int] = {}
    for v in vectors:
        v = int(v)
        while v:
            lead = v.bit_length() - 1
            if lead in basis:
                v ^= basis[lead]
            else:
                basis[lead] = v
                break
    return basis


def _in_span(v: int, basis: dict[int, int]) -> bool:
    while v:
        lead = v.bit_length() - 1
        if lead not in basis:
            return False
        v ^= basis[lead]
    return True


def _recoverable_units(received, num_sensors: int) -> int:
    """Bitmask of unit vectors contained in the span of ``received``."""
    basis = _gf2_basis(received)
    mask = 0
    for i in range(num_sensors):
        if _in_span(1 << i, basis):
            mask |= 1 << i
    return mask


def _received_vectors(outcome: LinkOutcome, config: RelayConfig) -> list[int]:
    vectors = [1 << i for i in range(outcome.topology.num_sensors) if outcome.direct[i]]
    for l, op in enumerate(config.operations):
        if outcome.relay[l] and all(outcome.heard(l, i) for i in op.sensors):
            vectors.append(op.mask)
    return vectors


def recover_measurements(
    outcome: LinkOutcome, config: RelayConfig, topology: Topology
) -> np.ndarray:
    """Reconstruction pattern: which measurements the gateway can decode.

    The gateway holds e_i for each direct success and the relay coding
    vectors that were delivered; measurement i is recoverable iff e_i is
    in the GF(2) span of those vectors.
    """
    if outcome.topology != topology:
        raise ValueError("outcome was produced for a different topology")
    config.validate_for(topology)
    mask = _recoverable_units(_received_vectors(outcome, config), topology.num_sensors)
    return np.array([(mask >> i) & 1 for i in range(topology.num_sensors)], dtype=bool)


# ---------------------------------------------------------------------------
# Pattern distribution over disjoint (direct, delivery) events
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PatternDistribution:
    """Probabilities of all 2**M reconstruction patterns.

    Entry ``probs[mask]`` is the probability that exactly the sensors
    whose bits are set in ``mask`` are recoverable.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.probs, dtype=float)).copy()
        if p.ndim != 1 or p.size & (p.size - 1):
            raise ValueError("pattern distribution must have 2**M entries")
        if np.min(p) < -1e-12:
            raise ValueError("pattern probabilities must be nonnegative")
        if abs(float(np.sum(p)) - 1.0) > 1e-12:
            raise ValueError("pattern probabilities must sum to one")
        np.clip(p, 0.0, None, out=p)
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def num_sensors(self) -> int:
        return self.probs.size.bit_length() - 1

    def prob(self, mask: int) -> float:
        return float(self.probs[mask])

    def marginal(self, sensor: int) -> float:
        idx = np.arange(self.probs.size)
        return float(np.sum(self.probs[(idx >> sensor) & 1 == 1]))


@lru_cache(maxsize=None)
def _combo_tables(config: RelayConfig, topology: Topology):
    """Map (direct mask, delivery mask) combos to reconstruction patterns.

    Combo bit i (i < M) is a direct success; bit M+l means relay l
    delivered its coding vector. Returns the pattern index per combo and
    a one-hot matrix folding combo weights into pattern probabilities.
    """
    config.validate_for(topology)
    M, L = topology.num_sensors, topology.num_relays
    if M + L > _MAX_COMBO_NODES:
        raise ValueError(f"combo table limited to {_MAX_COMBO_NODES} nodes")
    K = 1 << (M + L)
    patterns = np.empty(K, dtype=np.int64)
    for c in range(K):
        vectors = [1 << i for i in range(M) if (c >> i) & 1]
        vectors += [
            op.mask for l, op in enumerate(config.operations) if (c >> (M + l)) & 1
        ]
        patterns[c] = _recoverable_units(vectors, M)
    onehot = np.zeros((K, 1 << M))
    onehot[np.arange(K), patterns] = 1.0
    return patterns, onehot


@lru_cache(maxsize=None)
def _op_positions(config: RelayConfig, topology: Topology) -> tuple[tuple[int, ...], ...]:
    """Listening-slot positions of each relay's operation sensors."""
    return tuple(
        tuple(topology.hears[l].index(i) for i in op.sensors)
        for l, op in enumerate(config.operations)
    )


def pattern_distribution_batch(
    lam: np.ndarray,
    lam_relay: np.ndarray,
    rho: tuple[np.ndarray, ...],
    config: RelayConfig,
    topology: Topology,
) -> np.ndarray:
    """Vectorized pattern law for T time steps of link probabilities.

    lam is (T, M), lam_relay (T, L) and rho one (T, M_l) array per relay;
    returns (T, 2**M).
    """
    patterns, onehot = _combo_tables(config, topology)
    pos = _op_positions(config, topology)
    M, L = topology.num_sensors, topology.num_relays
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    T = lam.shape[0]
    cols = [lam]
    if L:
        lam_relay = np.atleast_2d(np.asarray(lam_relay, dtype=float))
        deliver = np.empty((T, L))
        for l in range(L):
            r = np.atleast_2d(np.asarray(rho[l], dtype=float))
            deliver[:, l] = lam_relay[:, l] * np.prod(r[:, list(pos[l])], axis=1)
        cols.append(deliver)
    node_probs = np.concatenate(cols, axis=1)  # (T, M+L)

    K = patterns.size
    idx = np.arange(K)
    w = np.ones((T, K))
    for j in range(M + L):
        pj = node_probs[:, j:j + 1]
        w *= np.where((idx >> j) & 1, pj, 1.0 - pj)
    return w @ onehot


def pattern_distribution_from_rates(
    lam, lam_relay, rho, config: RelayConfig, topology: Topology
) -> np.ndarray:
    """Single-step pattern law from raw probability arrays; (2**M,)."""
    rho = tuple(np.atleast_2d(np.asarray(r, dtype=float)) for r in rho)
    return pattern_distribution_batch(
        np.atleast_2d(lam), np.atleast_2d(lam_relay), rho, config, topology
    )[0]


def pattern_distribution(
    probs: LinkProbabilities, config: RelayConfig, topology: Topology
) -> PatternDistribution:
    """Exact law of the reconstruction pattern given link probabilities.

    Direct links and relay delivery events involve disjoint link sets, so
    enumerating their 2**(M+L) joint values with product weights is an
    exact expansion into disjoint product-form events.
    """
    row = pattern_distribution_from_rates(
        probs.direct, probs.relay, probs.hear, config, topology
    )
    return PatternDistribution(row)


def pattern_lookup(config: RelayConfig, topology: Topology):
    """Fast realized-pattern evaluator for simulation loops.

    Returns ``lookup(bits) -> mask`` taking flat link outcomes and giving
    the reconstruction-pattern bitmask; agrees with
    ``recover_measurements`` on every outcome.
    """
    patterns, _ = _combo_tables(config, topology)
    pos = _op_positions(config, topology)
    M, L = topology.num_sensors, topology.num_relays
    offsets = [topology.hear_offset(l) for l in range(L)]

    def lookup(bits) -> int:
        combo = 0
        for i in range(M):
            if bits[i]:
                combo |= 1 << i
        for l in range(L):
            if bits[M + l] and all(bits[offsets[l] + p] for p in pos[l]):
                combo |= 1 << (M + l)
        return int(patterns[combo])

    return lookup


def enumerate_outcomes_oracle(
    probs: LinkProbabilities, config: RelayConfig, topology: Topology
) -> PatternDistribution:
    """Brute-force reference: weight all 2**N raw link outcomes by their
    Bernoulli product probabilities and decode each one."""
    N = topology.num_links
    if N > _MAX_ORACLE_LINKS:
        raise ValueError(f"too many links for exhaustive enumeration ({N} > {_MAX_ORACLE_LINKS})")
    flat = probs.flat
    M = topology.num_sensors
    acc = np.zeros(1 << M)
    bits = np.empty(N, dtype=bool)
    for o in range(1 << N):
        w = 1.0
        for j in range(N):
            w *= flat[j] if (o >> j) & 1 else 1.0 - flat[j]
            if w == 0.0:
                break
        if w == 0.0:
            continue
        for j in range(N):
            bits[j] = (o >> j) & 1
        pattern = recover_measurements(LinkOutcome.from_flat(bits, topology), config, topology)
        acc[int(np.sum(pattern * (1 << np.arange(M))))] += w
    total = float(np.sum(acc))
    if total > 0.0:
        acc /= total  # remove accumulated rounding, sum is 1 by construction
    return PatternDistribution(acc)


# ---------------------------------------------------------------------------
# Boolean expressions for the reconstruction indicators
# ---------------------------------------------------------------------------

def _var_text(var: tuple) -> str:
    if var[0] == "direct":
        return f"g{var[1] + 1}"
    if var[0] == "relay":
        return f"g~{var[1] + 1}"
    return f"h{var[2] + 1}^{var[1] + 1}"


@dataclass(frozen=True)
class BooleanExpression:
    """Disjunction of conjunctions over link-success indicators.

    Variables are tagged tuples: ("direct", i) for a sensor-to-gateway
    success, ("relay", l) for a relay uplink success, and
    ("heard", l, i) for relay l hearing sensor i.
    """

    terms: tuple[frozenset, ...]

    def evaluate(self, outcome: LinkOutcome) -> bool:
        for term in self.terms:
            ok = True
            for var in term:
                if var[0] == "direct":
                    ok = bool(outcome.direct[var[1]])
                elif var[0] == "relay":
                    ok = bool(outcome.relay[var[1]])
                else:
                    ok = outcome.heard(var[1], var[2])
                if not ok:
                    break
            if ok:
                return True
        return False

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for term in self.terms:
            vars_sorted = sorted(term)
            txt = " & ".join(_var_text(v) for v in vars_sorted)
            parts.append(f"({txt})" if len(term) > 1 and len(self.terms) > 1 else txt)
        return " | ".join(parts)


def theta_expression_table(
    config: RelayConfig, topology: Topology
) -> tuple[BooleanExpression, ...]:
    """Per sensor, a Boolean formula over link indicators equivalent to
    the pattern produced by ``recover_measurements``.

    Built as the irredundant monotone DNF over minimal recovery
    certificates: each term is a minimal set of direct successes and
    relay deliveries whose coding vectors span e_i.
    """
    patterns, _ = _combo_tables(config, topology)
    M, L = topology.num_sensors, topology.num_relays
    K = patterns.size
    expressions = []
    for i in range(M):
        true_combos = [c for c in range(K) if (int(patterns[c]) >> i) & 1]
        minimal = [
            c for c in true_combos
            if all(
                not ((int(patterns[c ^ (1 << j)]) >> i) & 1)
                for j in range(M + L) if (c >> j) & 1
            )
        ]
        minimal.sort(key=lambda c: (bin(c).count("1"), c))
        terms = []
        for c in minimal:
            term = set()
            for j in range(M):
                if (c >> j) & 1:
                    term.add(("direct", j))
            for l in range(L):
                if (c >> (M + l)) & 1:
                    term.add(("relay", l))
                    for s in config.operations[l].sensors:
                        term.add(("heard", l, s))
            terms.append(frozenset(term))
        expressions.append(BooleanExpression(tuple(terms)))
    return tuple(expressions)


# ---------------------------------------------------------------------------
# Configuration enumeration
# ---------------------------------------------------------------------------

def relay_operations(topology: Topology, relay: int) -> tuple[RelayOperation, ...]:
    """All 2**M_l - 1 operations of one relay: every forward, then every
    XOR subset, in size-then-lexicographic order."""
    heard = topology.hears[relay]
    ops = []
    for size in range(1, len(heard) + 1):
        for subset in itertools.combinations(heard, size):
            ops.append(RelayOperation(subset))
    return tuple(ops)


def enumerate_configs(topology: Topology) -> tuple[RelayConfig, ...]:
    """All relay configurations in a deterministic order (first relay
    varies slowest)."""
    per_relay = [relay_operations(topology, l) for l in range(topology.num_relays)]
    return tuple(RelayConfig(ops) for ops in itertools.product(*per_relay))


def count_configs(topology: Topology) -> int:
    n = 1
    for m in topology.listen_counts:
        n *= (1 << m) - 1
    return n
