"""Scenario-driven Monte Carlo studies of the relay-aided gateway filter.

Each iteration owns RNG streams split from the master seed by explicit
spawn keys, so results are independent of execution order and two
scenarios differing only in scheme share the same process, gains and
packet draws. Per grid point the run reports the budget, the average
spent power, the time-averaged empirical squared estimation error, the
time-averaged prior-covariance trace and a divergence flag, in a fixed
CSV layout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import (
    ChannelState,
    FadingSpec,
    PowerAllocation,
    Topology,
    bpsk_success_probability,
)
from .filtering import FilterState, kalman_step, pattern_correction_traces
from .model import (
    SystemModel,
    half_bits_noise_factor,
    simulate_trajectory,
    spectral_radius,
    stationary_state_covariance,
)
from .netcode import (
    RelayConfig,
    RelayOperation,
    enumerate_configs,
    pattern_distribution_batch,
    pattern_lookup,
    relay_operations,
)
from .optimize import joint_select_and_power, optimize_power
from .scenario import Scenario, ScenarioError

__all__ = [
    "GridPointResult",
    "RunResult",
    "scheme_pieces",
    "run_scenario",
    "half_bits_step",
    "emit_results",
    "parse_results",
    "RESULT_COLUMNS",
]

RESULT_COLUMNS = (
    "scheme", "u_tot", "avg_power", "emp_err_trace", "avg_P_trace",
    "diverged", "iterations", "seed",
)


@dataclass(frozen=True, eq=False)
class GridPointResult:
    """Aggregates for one power-budget grid point."""

    u_tot: float
    avg_power: float
    emp_err_trace: float
    avg_P_trace: float
    diverged: bool
    emp_err_se: float = 0.0
    avg_P_se: float = 0.0
    diverged_count: int = 0


@dataclass(frozen=True, eq=False)
class RunResult:
    """One scenario run: a grid of aggregated points plus provenance."""

    scheme: str
    iterations: int
    seed: int
    points: tuple[GridPointResult, ...]
    step_traces: tuple[np.ndarray, ...] | None = None


def half_bits_step(
    state: FilterState,
    direct: np.ndarray,
    truncated: np.ndarray,
    measurements: np.ndarray,
    truncated_measurements: np.ndarray,
    model: SystemModel,
) -> FilterState:
    """Filter update for the half-bit relaying baseline.

    A sensor whose direct packet arrived is used at full precision; a
    sensor available only through a relay's truncated copy is used with
    the larger half-width quantization noise. With no truncated packets
    in play this is exactly the standard update.
    """
    direct = np.asarray(direct, dtype=bool)
    truncated = np.asarray(truncated, dtype=bool)
    use_trunc = truncated & ~direct
    pattern = direct | truncated
    if not np.any(use_trunc):
        return kalman_step(state, pattern, measurements, model)
    eff = model.effective_noise_variances.copy()
    eff[use_trunc] = (
        model.noise_variances[use_trunc]
        + half_bits_noise_factor(model.bits_per_packet)
        * model.measurement_powers[use_trunc]
    )
    meas = np.where(use_trunc, truncated_measurements, measurements)
    return kalman_step(state, pattern, meas, model, effective_noise=eff)


# ---------------------------------------------------------------------------
# Scheme plumbing
# ---------------------------------------------------------------------------

def scheme_pieces(sc: Scenario):
    """Topology/fading/config actually simulated for the scheme.

    The no-relay scheme drops the relays entirely, so a run on a relayed
    topology is bit-identical to the same scenario declared without
    relays.
    """
    if sc.scheme == "no-relay":
        topology = Topology.build(sc.topology.num_sensors, ())
        fading = FadingSpec(sc.fading.sensor_to_gateway, (), ())
        return topology, fading, RelayConfig(())
    if sc.scheme == "always-xor":
        config = RelayConfig(
            tuple(RelayOperation(g) for g in sc.topology.hears)
        )
        return sc.topology, sc.fading, config
    if sc.scheme == "fixed-config":
        return sc.topology, sc.fading, sc.fixed_config
    return sc.topology, sc.fading, None  # optimal / per-relay / half-bits


def _initial_state(sc: Scenario) -> FilterState:
    n = sc.model.state_dim
    if sc.p0 is not None:
        P0 = np.atleast_2d(np.asarray(sc.p0, dtype=float))
    else:
        P0 = stationary_state_covariance(sc.model.A, sc.model.Q)
    return FilterState(np.zeros(n), P0)


def _sample_gains(fading, topology, rng, T: int) -> np.ndarray:
    flat = fading.flat()
    G = np.empty((T, len(flat)))
    for j, f in enumerate(flat):
        G[:, j] = f.sample(rng, T)
    return G


def _prob_slices(PM: np.ndarray, topology: Topology):
    """Split a (T, N) link-probability matrix into the lam/lam_relay/rho
    blocks the pattern-law batch function expects."""
    M, L = topology.num_sensors, topology.num_relays
    rho = tuple(
        PM[:, topology.hear_offset(l):topology.hear_offset(l) + len(topology.hears[l])]
        for l in range(L)
    )
    return PM[:, :M], PM[:, M:M + L], rho


def _bool_rows(M: int) -> np.ndarray:
    idx = np.arange(1 << M)
    return ((idx[:, None] >> np.arange(M)) & 1).astype(bool)


def _iteration(sc: Scenario, topology, fading, fixed_config, u_tot, gi, it,
               init: FilterState, collect: bool):
    """Simulate one Monte Carlo iteration; returns per-iteration means.

    Runs with overflow/invalid warnings silenced: an unstable process
    eventually overflows the raw state trajectory, which contaminates
    only the empirical-error column; the covariance recursion never
    touches the state and stays exact.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _iteration_impl(
            sc, topology, fading, fixed_config, u_tot, gi, it, init, collect)


def _iteration_impl(sc: Scenario, topology, fading, fixed_config, u_tot, gi, it,
                    init: FilterState, collect: bool):
    model = sc.model
    M, L = topology.num_sensors, topology.num_relays
    N = topology.num_links
    T, burn = sc.horizon, sc.burn_in
    b = model.bits_per_packet
    optimized = sc.power_mode == "optimized"

    ss = np.random.SeedSequence(sc.seed, spawn_key=(gi, it))
    s_traj, s_gain, s_link, s_extra = ss.spawn(4)
    x0 = None if spectral_radius(model.A) < 1.0 else np.zeros(model.state_dim)
    traj = simulate_trajectory(model, T, np.random.default_rng(s_traj), x0=x0)
    G = _sample_gains(fading, topology, np.random.default_rng(s_gain), T)
    U = np.random.default_rng(s_link).random((T, N))

    half_bits = sc.scheme == "half-bits"
    if half_bits:
        extra_var = (
            half_bits_noise_factor(b) - model.quantization_factor
        ) * model.measurement_powers
        extra = (
            np.random.default_rng(s_extra).standard_normal((M, T))
            * np.sqrt(extra_var)[:, None]
        )

    if sc.power_mode == "fixed":
        alloc = PowerAllocation(sc.fixed_powers.sensors[:M], sc.fixed_powers.relays[:L])
    else:
        alloc = PowerAllocation.equal_split(topology, u_tot)
    fixed_power_total = alloc.total

    if not optimized:
        PM = bpsk_success_probability(G, alloc.per_link(topology)[None, :], b)
        bits_all = U < PM
        lam, lam_relay, rho = _prob_slices(PM, topology)
        if sc.scheme == "optimal":
            configs = enumerate_configs(topology)
            dists = np.stack([
                pattern_distribution_batch(lam, lam_relay, rho, c, topology)
                for c in configs
            ])  # (n_cfg, T, 2**M)
        elif sc.scheme == "per-relay":
            relay_ops = [relay_operations(topology, l) for l in range(L)]
            sub_dists = []
            for l in range(L):
                sub_topo = Topology.build(M, (topology.hears[l],))
                sub_dists.append(np.stack([
                    pattern_distribution_batch(
                        lam, lam_relay[:, l:l + 1], (rho[l],),
                        RelayConfig((op,)), sub_topo,
                    )
                    for op in relay_ops[l]
                ]))

    lookups = {}

    def lookup_for(config: RelayConfig):
        fn = lookups.get(config)
        if fn is None:
            fn = pattern_lookup(config, topology)
            lookups[config] = fn
        return fn

    rows = _bool_rows(M)
    hear_cols = [np.arange(topology.hear_offset(l),
                           topology.hear_offset(l) + len(topology.hears[l]))
                 for l in range(L)]

    state = init
    err_sum = trp_sum = pow_sum = 0.0
    count = 0
    diverged = False
    trace_log = np.empty(T) if collect else None

    for t in range(T):
        P = state.covariance
        trP = float(np.trace(P))
        if collect:
            trace_log[t] = trP
        if t >= burn:
            e = traj.states[t] - state.estimate
            err_sum += float(e @ e)
            trp_sum += trP
            count += 1

        # choose powers and configuration for this step
        if optimized:
            ch = ChannelState.from_flat(G[t], topology)
            if sc.scheme == "optimal":
                sel, pr = joint_select_and_power(
                    P, ch, topology, model, u_tot, "exact", sc.solver)
                config = sel.config
            elif sc.scheme == "per-relay":
                sel, pr = joint_select_and_power(
                    P, ch, topology, model, u_tot, "suboptimal", sc.solver)
                config = sel.config
            else:
                config = fixed_config
                pr = optimize_power(P, ch, config, topology, model, u_tot, sc.solver)
            step_alloc = pr.allocation
            probs_t = bpsk_success_probability(G[t], step_alloc.per_link(topology), b)
            bits = U[t] < probs_t
            power_t = step_alloc.total
        else:
            bits = bits_all[t]
            power_t = fixed_power_total
            if sc.scheme == "optimal":
                traces = pattern_correction_traces(P, model)
                config = configs[int(np.argmax(dists[:, t, :] @ traces))]
            elif sc.scheme == "per-relay":
                traces = pattern_correction_traces(P, model)
                config = RelayConfig(tuple(
                    relay_ops[l][int(np.argmax(sub_dists[l][:, t, :] @ traces))]
                    for l in range(L)
                ))
            else:
                config = fixed_config
        if t >= burn:
            pow_sum += power_t

        # realize the reconstruction pattern and update the filter
        meas = traj.measurements[:, t]
        if half_bits:
            direct = bits[:M]
            truncated = np.zeros(M, dtype=bool)
            for l in range(L):
                if bits[M + l]:
                    heard = bits[hear_cols[l]]
                    for pos, i in enumerate(topology.hears[l]):
                        if heard[pos]:
                            truncated[i] = True
            state = half_bits_step(state, direct, truncated, meas, meas + extra[:, t], model)
        else:
            mask = lookup_for(config)(bits)
            state = kalman_step(state, rows[mask], meas, model)

        trP_next = float(np.trace(state.covariance))
        if not np.isfinite(trP_next) or trP_next > sc.divergence_cap:
            diverged = True
            if collect:
                trace_log[t + 1:] = trP_next
            break

    scale = max(count, 1)
    return (
        err_sum / scale,
        trp_sum / scale,
        pow_sum / scale,
        diverged,
        trace_log,
    )


def run_scenario(scenario: Scenario, collect_traces: bool = False) -> RunResult:
    """Run the full Monte Carlo study described by a scenario.

    Deterministic for a fixed master seed: iteration streams are keyed by
    (grid index, iteration index), so the reduction is independent of any
    execution order.
    """
    scenario.validate()
    topology, fading, fixed_config = scheme_pieces(scenario)
    init = _initial_state(scenario)
    grid = scenario.u_tot_grid
    if not grid:
        grid = (scenario.fixed_powers.total,)

    points = []
    traces = []
    for gi, u_tot in enumerate(grid):
        errs = np.empty(scenario.iterations)
        trps = np.empty(scenario.iterations)
        pows = np.empty(scenario.iterations)
        n_diverged = 0
        for it in range(scenario.iterations):
            err, trp, pw, div, tlog = _iteration(
                scenario, topology, fading, fixed_config, u_tot, gi, it, init,
                collect_traces and it == 0,
            )
            errs[it], trps[it], pows[it] = err, trp, pw
            n_diverged += int(div)
            if collect_traces and it == 0:
                traces.append(tlog)
        k = scenario.iterations
        emp_se = float(np.std(errs, ddof=1) / np.sqrt(k)) if k > 1 else 0.0
        trp_se = float(np.std(trps, ddof=1) / np.sqrt(k)) if k > 1 else 0.0
        points.append(GridPointResult(
            u_tot=float(u_tot),
            avg_power=float(np.mean(pows)),
            emp_err_trace=float(np.mean(errs)),
            avg_P_trace=float(np.mean(trps)),
            diverged=n_diverged > 0,
            emp_err_se=emp_se,
            avg_P_se=trp_se,
            diverged_count=n_diverged,
        ))
    return RunResult(
        scheme=scenario.scheme,
        iterations=scenario.iterations,
        seed=scenario.seed,
        points=tuple(points),
        step_traces=tuple(traces) if collect_traces else None,
    )


# ---------------------------------------------------------------------------
# Delimited output
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return "%.12g" % float(x)


def emit_results(result: RunResult, path) -> None:
    """Write one CSV row per grid point; floats carry 12 significant
    digits and the byte stream is deterministic."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_COLUMNS)
            for p in result.points:
                w.writerow([
                    result.scheme,
                    _fmt(p.u_tot),
                    _fmt(p.avg_power),
                    _fmt(p.emp_err_trace),
                    _fmt(p.avg_P_trace),
                    int(p.diverged),
                    result.iterations,
                    result.seed,
                ])
    except OSError as exc:
        raise ScenarioError(f"cannot write results to {path}: {exc}") from None


def parse_results(path) -> list[dict]:
    """Read back rows written by emit_results, with numeric fields typed."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = []
            for raw in reader:
                rows.append({
                    "scheme": raw["scheme"],
                    "u_tot": float(raw["u_tot"]),
                    "avg_power": float(raw["avg_power"]),
                    "emp_err_trace": float(raw["emp_err_trace"]),
                    "avg_P_trace": float(raw["avg_P_trace"]),
                    "diverged": bool(int(raw["diverged"])),
                    "iterations": int(raw["iterations"]),
                    "seed": int(raw["seed"]),
                })
    except OSError as exc:
        raise ScenarioError(f"cannot read results from {path}: {exc}") from None
    return rows
