"""Command-line interface.

Subcommands mirror the library surface: ``simulate`` runs a scenario's
Monte Carlo study and writes the results CSV (plus a PNG of the curves
unless disabled), ``select`` scores every relay configuration for one
channel state, ``power`` solves the budgeted power problem, ``stability``
evaluates the boundedness certificate, ``count-configs`` reports the
size of the configuration set, and ``plot`` re-renders a results CSV.
All CSV output is byte-deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import ChannelState, PowerAllocation, sample_channel_state
from .experiments import emit_results, parse_results, run_scenario
from .model import stationary_state_covariance
from .netcode import RelayConfig, count_configs, enumerate_configs, relay_operations
from .optimize import joint_select_and_power, select_config_exhaustive, stability_check
from .scenario import (
    SCHEMES,
    Scenario,
    ScenarioError,
    config_to_text,
    load_scenario,
    op_to_text,
)

_FMT = "%.12g"


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return _FMT % float(x)


def _reference_covariance(sc: Scenario, arg: str | None) -> np.ndarray:
    if arg is None:
        if sc.p0 is not None:
            return np.atleast_2d(np.asarray(sc.p0, dtype=float))
        return stationary_state_covariance(sc.model.A, sc.model.Q)
    value = json.loads(arg)
    return np.atleast_2d(np.asarray(value, dtype=float))


def _channel_state(sc: Scenario, gains_arg: str, seed: int) -> ChannelState:
    if gains_arg == "sample":
        return sample_channel_state(sc.fading, sc.topology, seed)
    raw = json.loads(Path(gains_arg).read_text())
    return ChannelState(
        np.asarray(raw["sensor_to_gateway"], dtype=float),
        np.asarray(raw.get("relay_to_gateway", []), dtype=float),
        tuple(np.asarray(g, dtype=float) for g in raw.get("sensor_to_relay", [])),
    )


def _pinned_scheme(sc: Scenario):
    """Topology, fading and configuration of a non-adaptive scheme."""
    from .experiments import scheme_pieces
    topology, fading, config = scheme_pieces(sc)
    if config is None:
        raise ScenarioError(
            f"scheme {sc.scheme!r} does not pin a single relay configuration; "
            "use a fixed-config, always-xor or no-relay scenario"
        )
    return topology, fading, config


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if args.iterations is not None:
        sc = replace(sc, iterations=args.iterations)
    if args.scheme is not None:
        sc = replace(sc, scheme=args.scheme)
    sc.validate()
    result = run_scenario(sc)
    emit_results(result, args.out)
    print(f"wrote {args.out} ({len(result.points)} grid points, "
          f"scheme={result.scheme}, seed={result.seed})")
    if not args.no_plot:
        from .plotting import plot_results
        png = Path(args.plot) if args.plot else Path(args.out).with_suffix(".png")
        plot_results(parse_results(args.out), png, title=sc.name or None)
        print(f"wrote {png}")
    return 0


def _cmd_select(args) -> int:
    sc = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else sc.seed
    P = _reference_covariance(sc, args.p)
    state = _channel_state(sc, args.gains, seed)
    powers = PowerAllocation.equal_split(sc.topology, args.u_tot) if args.u_tot \
        else PowerAllocation.equal_split(sc.topology, sum(sc.u_tot_grid) / max(len(sc.u_tot_grid), 1) or 1.0)
    sel = select_config_exhaustive(P, state, powers, sc.topology, sc.model)
    rows = [
        [config_to_text(cfg), _fmt(obj), int(cfg == sel.config)]
        for cfg, obj in sel.table
    ]
    if args.out:
        _write_csv(args.out, ["config", "objective", "chosen"], rows)
        print(f"wrote {args.out}")
    print(f"chosen: {config_to_text(sel.config)}  (objective {_fmt(sel.objective)})")
    return 0


def _cmd_power(args) -> int:
    sc = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else sc.seed
    P = _reference_covariance(sc, args.p)
    state = _channel_state(sc, args.gains, seed)
    if sc.scheme in ("optimal", "per-relay"):
        mode = "exact" if sc.scheme == "optimal" else "suboptimal"
        sel, pr = joint_select_and_power(
            P, state, sc.topology, sc.model, args.u_tot, mode, sc.solver)
        config = sel.config
    else:
        from .optimize import optimize_power
        topology, _, config = _pinned_scheme(sc)
        if sc.scheme == "no-relay":
            state = ChannelState(state.direct, np.empty(0), ())
        pr = optimize_power(P, state, config, topology, sc.model, args.u_tot, sc.solver)
    header = (
        ["u_tot", "objective", "config"]
        + [f"u_sensor_{i + 1}" for i in range(pr.allocation.sensors.size)]
        + [f"u_relay_{l + 1}" for l in range(pr.allocation.relays.size)]
    )
    row = (
        [_fmt(args.u_tot), _fmt(pr.objective), config_to_text(config) or "none"]
        + [_fmt(u) for u in pr.allocation.sensors]
        + [_fmt(u) for u in pr.allocation.relays]
    )
    if args.out:
        _write_csv(args.out, header, [row])
        print(f"wrote {args.out}")
    print(f"config: {config_to_text(config) or 'none'}")
    print(f"objective {_fmt(pr.objective)} with powers "
          f"sensors={[float(_fmt(u)) for u in pr.allocation.sensors]} "
          f"relays={[float(_fmt(u)) for u in pr.allocation.relays]}")
    return 0


def _cmd_stability(args) -> int:
    sc = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else sc.seed
    samples = args.samples if args.samples is not None else sc.stability_samples
    topology, fading, config = _pinned_scheme(sc)
    if sc.power_mode == "fixed":
        powers = PowerAllocation(
            sc.fixed_powers.sensors[:topology.num_sensors],
            sc.fixed_powers.relays[:topology.num_relays])
    else:
        u_tot = args.u_tot if args.u_tot else (sc.u_tot_grid[0] if sc.u_tot_grid else 1.0)
        powers = PowerAllocation.equal_split(topology, u_tot)
    report = stability_check(
        sc.model, fading, topology, config, powers, samples, seed=seed)
    row = [
        report.samples,
        _fmt(report.outage_mean),
        _fmt(report.spectral_norm_sq),
        _fmt(report.product),
        _fmt(report.ci_low),
        _fmt(report.ci_high),
        report.verdict,
    ]
    if args.out:
        _write_csv(
            args.out,
            ["samples", "outage_mean", "spectral_norm_sq", "product",
             "ci_low", "ci_high", "verdict"],
            [row],
        )
        print(f"wrote {args.out}")
    print(f"outage mean {report.outage_mean:.6g}, product {report.product:.6g} "
          f"(95% CI [{report.ci_low:.6g}, {report.ci_high:.6g}]): {report.verdict}")
    return 0


def _cmd_count_configs(args) -> int:
    sc = load_scenario(args.scenario)
    total = count_configs(sc.topology)
    rows = [
        [f"relay_{l + 1}_operations", len(relay_operations(sc.topology, l))]
        for l in range(sc.topology.num_relays)
    ]
    rows.append(["total_configs", total])
    if args.out:
        _write_csv(args.out, ["name", "value"], rows)
        print(f"wrote {args.out}")
    for l in range(sc.topology.num_relays):
        ops = relay_operations(sc.topology, l)
        print(f"relay {l + 1}: {len(ops)} operations "
              f"({', '.join(op_to_text(op) for op in ops)})")
    print(f"total configurations: {total}")
    if args.list:
        for cfg in enumerate_configs(sc.topology):
            print(f"  {config_to_text(cfg)}")
    return 0


def _cmd_plot(args) -> int:
    from .plotting import plot_results
    rows = []
    for path in args.results:
        rows.extend(parse_results(path))
    out = args.out or str(Path(args.results[0]).with_suffix(".png"))
    plot_results(rows, out, title=args.title)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="relaykf",
        description="Kalman filtering over packet-dropping fading links with "
                    "forwarding/XOR relays: selection, power control, Monte Carlo studies.",
    )
    p.add_argument("--version", action="version", version=f"relaykf {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write the results CSV")
    s.add_argument("scenario")
    s.add_argument("--out", required=True, help="results CSV path")
    s.add_argument("--seed", type=int, default=None, help="override the master seed")
    s.add_argument("--iterations", type=int, default=None,
                   help="override the Monte Carlo iteration count")
    s.add_argument("--scheme", default=None, choices=list(SCHEMES),
                   help="override the scenario's scheme")
    s.add_argument("--plot", default=None, help="figure path (default: CSV path with .png)")
    s.add_argument("--no-plot", action="store_true", help="skip the figure")
    s.set_defaults(fn=_cmd_simulate)

    s = sub.add_parser("select", help="score every relay configuration for one channel state")
    s.add_argument("scenario")
    s.add_argument("--p", default=None, help="prior covariance (JSON scalar or matrix); "
                                             "default: stationary covariance")
    s.add_argument("--gains", default="sample",
                   help="'sample' or a JSON file with per-link gains")
    s.add_argument("--u-tot", type=float, default=None, dest="u_tot",
                   help="budget for the equal split (default: mean of the scenario grid)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None, help="write the per-config table as CSV")
    s.set_defaults(fn=_cmd_select)

    s = sub.add_parser("power", help="optimize transmit powers under a sum budget")
    s.add_argument("scenario")
    s.add_argument("--u-tot", type=float, required=True, dest="u_tot")
    s.add_argument("--p", default=None)
    s.add_argument("--gains", default="sample")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=_cmd_power)

    s = sub.add_parser("stability", help="Monte Carlo boundedness certificate")
    s.add_argument("scenario")
    s.add_argument("--samples", type=int, default=None)
    s.add_argument("--u-tot", type=float, default=None, dest="u_tot")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=_cmd_stability)

    s = sub.add_parser("count-configs", help="size of the relay configuration set")
    s.add_argument("scenario")
    s.add_argument("--list", action="store_true", help="also list every configuration")
    s.add_argument("--out", default=None)
    s.set_defaults(fn=_cmd_count_configs)

    s = sub.add_parser("plot", help="render one or more results CSVs as a figure")
    s.add_argument("results", nargs="+")
    s.add_argument("--out", default=None)
    s.add_argument("--title", default=None)
    s.set_defaults(fn=_cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ScenarioError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
