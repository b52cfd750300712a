"""Relay-configuration selection, transmit-power allocation, stability test.

Selection minimizes the trace of the expected one-step-ahead covariance
over the configuration set, either exhaustively or relay by relay (each
relay optimized as if it were alone). Power control spends a sum budget
over the simplex with a projected direct search; spending the whole
budget is justified because the objective is nonincreasing in every
link's reception probability and the reception law is monotone in power.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .channel import (
    ChannelState,
    FadingSpec,
    LinkProbabilities,
    PowerAllocation,
    Topology,
    link_probabilities,
    sample_channel_state,
)
from .filtering import pattern_correction_traces, prediction_trace
from .model import SystemModel
from .netcode import (
    RelayConfig,
    enumerate_configs,
    pattern_distribution,
    pattern_distribution_from_rates,
    relay_operations,
)

__all__ = [
    "SelectionResult",
    "PowerResult",
    "PowerSolverParams",
    "StabilityReport",
    "select_config_exhaustive",
    "select_config_per_relay",
    "optimize_power",
    "joint_select_and_power",
    "stability_check",
    "full_rank_patterns",
]


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Chosen configuration, its objective Tr f(P), and bookkeeping."""

    config: RelayConfig
    objective: float
    table: tuple[tuple[RelayConfig, float], ...] | None = None
    evaluations: int = 0


@dataclass(frozen=True, eq=False)
class PowerResult:
    """Best allocation found, its objective, and solver diagnostics."""

    allocation: PowerAllocation
    objective: float
    restarts: int
    evaluations: int


@dataclass(frozen=True)
class PowerSolverParams:
    """Direct-search settings for the power-control problem."""

    restarts: int = 8
    max_evals: int = 200
    tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.max_evals < 5:
            raise ValueError("need at least one restart and a few evaluations")


def _objective_trace(
    P: np.ndarray,
    probs: LinkProbabilities,
    config: RelayConfig,
    topology: Topology,
    model: SystemModel,
    traces: np.ndarray | None = None,
    base: float | None = None,
) -> float:
    if traces is None:
        traces = pattern_correction_traces(P, model)
    if base is None:
        base = prediction_trace(P, model)
    dist = pattern_distribution_from_rates(
        probs.direct, probs.relay, probs.hear, config, topology
    )
    return base - float(dist @ traces)


def select_config_exhaustive(
    P: np.ndarray,
    state: ChannelState,
    powers: PowerAllocation,
    topology: Topology,
    model: SystemModel,
    keep_table: bool = True,
) -> SelectionResult:
    """Evaluate Tr f(P) for every configuration and return the minimizer;
    ties go to the first configuration in enumeration order."""
    probs = link_probabilities(state, powers, topology, model.bits_per_packet)
    traces = pattern_correction_traces(P, model)
    base = prediction_trace(P, model)
    best = None
    table = []
    for config in enumerate_configs(topology):
        obj = _objective_trace(P, probs, config, topology, model, traces, base)
        table.append((config, obj))
        if best is None or obj < best[1]:
            best = (config, obj)
    return SelectionResult(
        best[0], best[1],
        tuple(table) if keep_table else None,
        evaluations=len(table),
    )


def select_config_per_relay(
    P: np.ndarray,
    state: ChannelState,
    powers: PowerAllocation,
    topology: Topology,
    model: SystemModel,
) -> SelectionResult:
    """Optimize each relay's operation as if it were the only relay, then
    assemble the per-relay winners into one configuration.

    Costs sum(2**M_l - 1) objective evaluations instead of the product;
    the reported objective is the assembled configuration's Tr f(P) on
    the full topology.
    """
    probs = link_probabilities(state, powers, topology, model.bits_per_packet)
    traces = pattern_correction_traces(P, model)
    base = prediction_trace(P, model)
    chosen = []
    evaluations = 0
    for l in range(topology.num_relays):
        sub_topology = Topology.build(topology.num_sensors, (topology.hears[l],))
        sub_probs = LinkProbabilities(probs.direct, probs.relay[l:l + 1], (probs.hear[l],))
        best = None
        for op in relay_operations(topology, l):
            config = RelayConfig((op,))
            obj = _objective_trace(P, sub_probs, config, sub_topology, model, traces, base)
            evaluations += 1
            if best is None or obj < best[1]:
                best = (op, obj)
        chosen.append(best[0])
    config = RelayConfig(tuple(chosen))
    objective = _objective_trace(P, probs, config, topology, model, traces, base)
    return SelectionResult(config, objective, table=None, evaluations=evaluations)


# ---------------------------------------------------------------------------
# Power control over the simplex
# ---------------------------------------------------------------------------

def _project_simplex(v, total: float) -> list[float]:
    """Euclidean projection onto {u >= 0, sum(u) = total}."""
    u = sorted(v, reverse=True)
    css, tau = 0.0, 0.0
    for j, uj in enumerate(u, start=1):
        css += uj
        t = (css - total) / j
        if uj - t > 0.0:
            tau = t
    return [max(x - tau, 0.0) for x in v]


def _nelder_mead(
    objective: Callable[[list[float]], float],
    x0: list[float],
    total: float,
    max_evals: int,
    tol: float,
):
    """Nelder-Mead on raw points, each evaluated after simplex projection.

    Returns (best_projected_point, best_value, evaluations); the best
    projected point ever evaluated is tracked, so the result is never
    worse than the start point.
    """
    d = len(x0)
    evals = 0
    best_x, best_v = None, float("inf")

    def f(x):
        nonlocal evals, best_x, best_v
        xp = _project_simplex(x, total)
        val = objective(xp)
        evals += 1
        if val < best_v:
            best_x, best_v = xp, val
        return val

    step = 0.2 * total
    simplex = [list(x0)]
    for j in range(d):
        p = list(x0)
        p[j] += step
        simplex.append(p)
    values = [f(p) for p in simplex]

    while evals < max_evals:
        order = sorted(range(d + 1), key=values.__getitem__)
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        if values[-1] - values[0] < tol:
            break
        worst = simplex[-1]
        centroid = [sum(p[j] for p in simplex[:-1]) / d for j in range(d)]
        reflected = [2.0 * c - w for c, w in zip(centroid, worst)]
        fr = f(reflected)
        if fr < values[0]:
            expanded = [3.0 * c - 2.0 * w for c, w in zip(centroid, worst)]
            fe = f(expanded)
            if fe < fr:
                simplex[-1], values[-1] = expanded, fe
            else:
                simplex[-1], values[-1] = reflected, fr
        elif fr < values[-2]:
            simplex[-1], values[-1] = reflected, fr
        else:
            contracted = [0.5 * (c + w) for c, w in zip(centroid, worst)]
            fc = f(contracted)
            if fc < values[-1]:
                simplex[-1], values[-1] = contracted, fc
            else:
                for j in range(1, d + 1):
                    simplex[j] = [
                        0.5 * (a + b) for a, b in zip(simplex[0], simplex[j])
                    ]
                    values[j] = f(simplex[j])
                    if evals >= max_evals:
                        break
    return best_x, best_v, evals


def _start_points(
    d: int, total: float, restarts: int, rng: np.random.Generator
) -> list[list[float]]:
    """Equal split, then power-heavy corners, then random interior."""
    starts = [[total / d] * d]
    for j in range(d):
        if len(starts) >= restarts:
            break
        p = [0.1 * total / max(d - 1, 1)] * d
        p[j] = 0.9 * total
        starts.append(p)
    while len(starts) < restarts:
        w = rng.exponential(1.0, d)
        starts.append(list(total * w / np.sum(w)))
    return starts[:restarts]


def _power_objective(
    P: np.ndarray,
    state: ChannelState,
    config: RelayConfig,
    topology: Topology,
    model: SystemModel,
) -> Callable[[list[float]], float]:
    """Build Tr f(P) as a fast scalar function of the flat power vector.

    The prior-dependent pieces (prediction trace and per-pattern
    correction traces) are fixed while powers vary, so one evaluation
    reduces to link probabilities plus a combo sweep. Pure-float inner
    loop; the combo table comes from the shared pattern machinery.
    """
    from math import erfc, sqrt

    from .netcode import _combo_tables, _op_positions

    M, L = topology.num_sensors, topology.num_relays
    if M + L > 12:
        raise ValueError("power control supported up to 12 transmitting nodes")
    traces = [float(x) for x in pattern_correction_traces(P, model)]
    base = prediction_trace(P, model)
    patterns = [int(x) for x in _combo_tables(config, topology)[0]]
    pos = _op_positions(config, topology)
    b = model.bits_per_packet
    gains = [float(g) for g in state.flat]
    hear_offsets = [topology.hear_offset(l) for l in range(L)]
    hears = topology.hears
    K = 1 << (M + L)

    def prob(g: float, u: float) -> float:
        if g == float("inf"):
            return 1.0
        return (0.5 * erfc(-sqrt(g * u) * 0.7071067811865476)) ** b

    def objective(u_flat) -> float:
        node = [prob(gains[i], u_flat[i]) for i in range(M)]
        for l in range(L):
            q = prob(gains[M + l], u_flat[M + l])
            ofs = hear_offsets[l]
            for p_idx in pos[l]:
                q *= prob(gains[ofs + p_idx], u_flat[hears[l][p_idx]])
            node.append(q)
        corr = 0.0
        for c in range(K):
            w = 1.0
            for j in range(M + L):
                pj = node[j]
                w *= pj if (c >> j) & 1 else 1.0 - pj
                if w == 0.0:
                    break
            if w != 0.0:
                corr += w * traces[patterns[c]]
        return base - corr

    return objective


def optimize_power(
    P: np.ndarray,
    state: ChannelState,
    config: RelayConfig,
    topology: Topology,
    model: SystemModel,
    u_tot: float,
    params: PowerSolverParams = PowerSolverParams(),
) -> PowerResult:
    """Minimize Tr f(P) over transmit powers with sum equal to u_tot.

    Multi-start projected Nelder-Mead; deterministic for fixed params
    (random interior starts come from params.seed). The equal split is
    always a start point, so the result never evaluates worse than it.
    """
    if not (u_tot > 0.0):
        raise ValueError("the power budget must be strictly positive")
    config.validate_for(topology)
    d = topology.num_sensors + topology.num_relays
    objective = _power_objective(P, state, config, topology, model)

    if d == 1:
        u = [float(u_tot)]
        return PowerResult(
            PowerAllocation.from_flat(u, topology), objective(u),
            restarts=1, evaluations=1,
        )

    rng = np.random.default_rng(params.seed)
    best_u, best_val, total_evals = None, np.inf, 0
    starts = _start_points(d, u_tot, params.restarts, rng)
    for x0 in starts:
        u, val, ev = _nelder_mead(objective, x0, u_tot, params.max_evals, params.tol)
        total_evals += ev
        if val < best_val:
            best_u, best_val = u, val
    return PowerResult(
        PowerAllocation.from_flat(best_u, topology),
        best_val,
        restarts=len(starts),
        evaluations=total_evals,
    )


def joint_select_and_power(
    P: np.ndarray,
    state: ChannelState,
    topology: Topology,
    model: SystemModel,
    u_tot: float,
    mode: str = "exact",
    params: PowerSolverParams = PowerSolverParams(),
) -> tuple[SelectionResult, PowerResult]:
    """Choose a relay configuration together with transmit powers.

    exact: solve the power problem for every configuration and keep the
    global best. suboptimal: pick a configuration relay by relay under an
    equal split, then solve the power problem once for it.
    """
    if mode == "exact":
        best = None
        table = []
        for config in enumerate_configs(topology):
            pr = optimize_power(P, state, config, topology, model, u_tot, params)
            table.append((config, pr.objective))
            if best is None or pr.objective < best[1].objective:
                best = (config, pr)
        sel = SelectionResult(
            best[0], best[1].objective, tuple(table), evaluations=len(table)
        )
        return sel, best[1]
    if mode == "suboptimal":
        equal = PowerAllocation.equal_split(topology, u_tot)
        sel = select_config_per_relay(P, state, equal, topology, model)
        pr = optimize_power(P, state, sel.config, topology, model, u_tot, params)
        return sel, pr
    raise ValueError(f"unknown mode {mode!r}; expected 'exact' or 'suboptimal'")


# ---------------------------------------------------------------------------
# Stability certificate
# ---------------------------------------------------------------------------

def full_rank_patterns(model: SystemModel) -> np.ndarray:
    """For each pattern mask, whether the stacked observation rows of its
    sensors have full column rank (SVD rank, tolerance 1e-10 times the
    spectral norm of the stack)."""
    M, n = model.num_sensors, model.state_dim
    out = np.zeros(1 << M, dtype=bool)
    for mask in range(1, 1 << M):
        sel = [i for i in range(M) if (mask >> i) & 1]
        C = model.C_matrix[sel]
        tol = 1e-10 * max(float(np.linalg.norm(C, 2)), 1.0)
        out[mask] = np.linalg.matrix_rank(C, tol=tol) == n
    return out


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """Monte Carlo estimate of the observability-outage product.

    outage_mean estimates the probability that the reconstructed rows do
    not reach full column rank, averaged over channel draws; product is
    that estimate times the squared spectral norm of A, with a 95 percent
    confidence interval. The boundedness condition holds when product is
    below one.
    """

    outage_mean: float
    spectral_norm_sq: float
    product: float
    ci_low: float
    ci_high: float
    samples: int
    verdict: str


def stability_check(
    model: SystemModel,
    fading: FadingSpec,
    topology: Topology,
    policy: RelayConfig | Callable[[ChannelState], RelayConfig],
    powers: PowerAllocation,
    samples: int,
    seed: int = 0,
) -> StabilityReport:
    """Certify the boundedness condition for a channel-only policy.

    The policy maps a channel state to a relay configuration (a fixed
    configuration is accepted as the constant policy). Per channel draw
    the outage probability is exact via the pattern law; only the gains
    are sampled. Verdict: "satisfied" when the upper confidence bound of
    the product is below one, "violated" when the lower bound reaches
    one, otherwise "inconclusive".
    """
    if samples < 1000:
        raise ValueError("need at least 1000 Monte Carlo samples")
    if isinstance(policy, RelayConfig):
        fixed = policy
        policy_fn = lambda _state: fixed
    else:
        required = [
            p for p in inspect.signature(policy).parameters.values()
            if p.default is inspect.Parameter.empty
            and p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)
        ]
        if len(required) != 1:
            raise ValueError(
                "policy must be a function of the channel state alone; "
                f"got {len(required)} required parameters"
            )
        policy_fn = policy
    fading.validate_for(topology)
    rng = np.random.default_rng(seed)
    ok_mask = full_rank_patterns(model)
    outages = np.empty(samples)
    for k in range(samples):
        state = sample_channel_state(fading, topology, rng)
        probs = link_probabilities(state, powers, topology, model.bits_per_packet)
        config = policy_fn(state)
        dist = pattern_distribution(probs, config, topology)
        outages[k] = 1.0 - float(np.sum(dist.probs[ok_mask]))
    norm_sq = float(np.linalg.norm(model.A, 2)) ** 2
    mean = float(np.mean(outages))
    se = float(np.std(outages, ddof=1) / np.sqrt(samples))
    z = 1.959963984540054  # 95% normal interval
    product = norm_sq * mean
    lo, hi = norm_sq * (mean - z * se), norm_sq * (mean + z * se)
    if hi < 1.0:
        verdict = "satisfied"
    elif lo >= 1.0:
        verdict = "violated"
    else:
        verdict = "inconclusive"
    return StabilityReport(mean, norm_sq, product, lo, hi, samples, verdict)
