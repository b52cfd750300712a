"""Scenario files: a JSON description of one simulation study.

A scenario bundles the process model, topology, fading, the scheme under
test, the power policy, the budget grid and the Monte Carlo settings.
Sensor and relay indices are 1-based in scenario files and CLI text
(matching how the setups are usually written down) and 0-based inside
the package; this module is the only place that converts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import FadingSpec, LinkFading, PowerAllocation, Topology
from .model import SensorSpec, SystemModel, spectral_radius
from .netcode import RelayConfig, RelayOperation
from .optimize import PowerSolverParams

__all__ = [
    "Scenario",
    "ScenarioError",
    "SCHEMES",
    "POWER_MODES",
    "load_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "save_scenario",
    "op_to_text",
    "op_from_text",
    "config_to_text",
]

SCHEMES = ("optimal", "per-relay", "always-xor", "no-relay", "half-bits", "fixed-config")
POWER_MODES = ("equal-split", "optimized", "fixed")


class ScenarioError(ValueError):
    """Scenario validation failure."""


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything one Monte Carlo study needs, seed included."""

    model: SystemModel
    topology: Topology
    fading: FadingSpec
    scheme: str
    power_mode: str
    u_tot_grid: tuple[float, ...]
    horizon: int
    iterations: int
    seed: int
    name: str = ""
    burn_in: int = 100
    divergence_cap: float = 1e9
    solver: PowerSolverParams = field(default_factory=PowerSolverParams)
    fixed_config: RelayConfig | None = None
    fixed_powers: PowerAllocation | None = None
    stability_samples: int = 10000
    p0: np.ndarray | None = None

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ScenarioError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.power_mode not in POWER_MODES:
            raise ScenarioError(
                f"unknown power mode {self.power_mode!r}; expected one of {POWER_MODES}"
            )
        if self.horizon < 1 or self.iterations < 1:
            raise ScenarioError("horizon and iterations must both be >= 1")
        if not (0 <= self.burn_in < self.horizon):
            raise ScenarioError("burn_in must satisfy 0 <= burn_in < horizon")
        if len(self.u_tot_grid) == 0 and self.power_mode != "fixed":
            raise ScenarioError("u_tot_grid must not be empty")
        if any(not (u > 0.0) for u in self.u_tot_grid):
            raise ScenarioError("budget grid entries must be strictly positive")
        if self.model.num_sensors != self.topology.num_sensors:
            raise ScenarioError("model sensor count does not match the topology")
        self.fading.validate_for(self.topology)
        if self.scheme == "fixed-config":
            if self.fixed_config is None:
                raise ScenarioError("scheme fixed-config requires fixed_config")
            self.fixed_config.validate_for(self.topology)
        if self.scheme == "always-xor":
            if any(m < 2 for m in self.topology.listen_counts):
                raise ScenarioError(
                    "always-xor needs every relay to hear at least two sensors"
                )
        if self.scheme == "half-bits":
            if self.model.bits_per_packet % 2 != 0:
                raise ScenarioError("half-bits requires an even packet bit width")
            if self.power_mode == "optimized":
                raise ScenarioError("half-bits supports equal-split or fixed powers only")
        if self.power_mode == "fixed":
            if self.fixed_powers is None:
                raise ScenarioError("power mode fixed requires fixed_powers")
            M, L = self.topology.num_sensors, self.topology.num_relays
            if self.fixed_powers.sensors.shape != (M,) or \
                    self.fixed_powers.relays.shape != (L,):
                raise ScenarioError("fixed_powers does not match the topology")
        if self.p0 is not None:
            n = self.model.state_dim
            if np.atleast_2d(np.asarray(self.p0)).shape != (n, n):
                raise ScenarioError("p0 must be an n x n matrix")
        elif spectral_radius(self.model.A) >= 1.0:
            raise ScenarioError(
                "an unstable process needs an explicit initial covariance p0"
            )


# ---------------------------------------------------------------------------
# Textual relay-operation form (1-based): "fwd 2", "xor 1,2"
# ---------------------------------------------------------------------------

def op_to_text(op: RelayOperation) -> str:
    if op.is_forward:
        return f"fwd {op.sensors[0] + 1}"
    return "xor " + ",".join(str(i + 1) for i in op.sensors)


def op_from_text(text: str) -> RelayOperation:
    parts = text.strip().split(None, 1)
    if len(parts) != 2 or parts[0] not in ("fwd", "xor"):
        raise ScenarioError(f"cannot parse relay operation {text!r}")
    try:
        sensors = tuple(int(tok) - 1 for tok in parts[1].replace(" ", "").split(","))
    except ValueError:
        raise ScenarioError(f"cannot parse relay operation {text!r}") from None
    if any(i < 0 for i in sensors):
        raise ScenarioError(f"sensor indices are 1-based in {text!r}")
    if parts[0] == "fwd":
        if len(sensors) != 1:
            raise ScenarioError(f"fwd takes exactly one sensor: {text!r}")
        return RelayOperation.forward(sensors[0])
    return RelayOperation.xor(sensors)


def config_to_text(config: RelayConfig) -> str:
    return "; ".join(
        f"relay {l + 1}: {op_to_text(op)}" for l, op in enumerate(config.operations)
    )


# ---------------------------------------------------------------------------
# JSON (de)serialization
# ---------------------------------------------------------------------------

def _fading_from_json(entry, count: int) -> tuple[LinkFading, ...]:
    if isinstance(entry, dict):
        entry = [entry] * count
    if len(entry) != count:
        raise ScenarioError(f"expected {count} fading entries, got {len(entry)}")
    return tuple(LinkFading(e["family"], float(e.get("mean", 1.0))) for e in entry)


def _fading_to_json(group: tuple[LinkFading, ...]) -> list[dict]:
    return [{"family": f.family, "mean": f.mean} for f in group]


def scenario_from_dict(raw: dict) -> Scenario:
    try:
        m = raw["model"]
        sensors = tuple(
            SensorSpec(
                np.asarray(s["C"], dtype=float),
                float(s["R"]),
                float(s["y_power"]) if "y_power" in s else None,
            )
            for s in m["sensors"]
        )
        model = SystemModel(
            np.asarray(m["A"], dtype=float),
            np.asarray(m["Q"], dtype=float),
            sensors,
            int(m["bits_per_packet"]),
        )
        t = raw["topology"]
        hears = tuple(tuple(int(i) - 1 for i in group) for group in t.get("hears", []))
        topology = Topology.build(int(t["num_sensors"]), hears)
        f = raw["fading"]
        fading = FadingSpec(
            _fading_from_json(f["sensor_to_gateway"], topology.num_sensors),
            _fading_from_json(f.get("relay_to_gateway", []), topology.num_relays),
            tuple(
                _fading_from_json(group, m_l)
                for group, m_l in zip(
                    f.get("sensor_to_relay", [{}] * topology.num_relays)
                    if isinstance(f.get("sensor_to_relay"), list)
                    else [f.get("sensor_to_relay", {})] * topology.num_relays,
                    topology.listen_counts,
                )
            ),
        )
        solver_raw = raw.get("solver", {})
        solver = PowerSolverParams(
            restarts=int(solver_raw.get("restarts", 8)),
            max_evals=int(solver_raw.get("max_evals", 200)),
            tol=float(solver_raw.get("tolerance", 1e-10)),
            seed=int(solver_raw.get("seed", 0)),
        )
        fixed_config = None
        if raw.get("fixed_config") is not None:
            fixed_config = RelayConfig(
                tuple(op_from_text(s) for s in raw["fixed_config"])
            )
        fixed_powers = None
        if raw.get("fixed_powers") is not None:
            fp = raw["fixed_powers"]
            fixed_powers = PowerAllocation(
                np.asarray(fp["sensors"], dtype=float),
                np.asarray(fp.get("relays", []), dtype=float),
            )
        p0 = np.asarray(raw["p0"], dtype=float) if raw.get("p0") is not None else None
        scenario = Scenario(
            model=model,
            topology=topology,
            fading=fading,
            scheme=str(raw["scheme"]),
            power_mode=str(raw.get("power_mode", "equal-split")),
            u_tot_grid=tuple(float(u) for u in raw.get("u_tot_grid", [])),
            horizon=int(raw["horizon"]),
            iterations=int(raw["iterations"]),
            seed=int(raw["seed"]),
            name=str(raw.get("name", "")),
            burn_in=int(raw.get("burn_in", 100)),
            divergence_cap=float(raw.get("divergence_cap", 1e9)),
            solver=solver,
            fixed_config=fixed_config,
            fixed_powers=fixed_powers,
            stability_samples=int(raw.get("stability_samples", 10000)),
            p0=p0,
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing required field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"invalid scenario: {exc}") from None
    scenario.validate()
    return scenario


def scenario_to_dict(sc: Scenario) -> dict:
    model = {
        "A": sc.model.A.tolist(),
        "Q": sc.model.Q.tolist(),
        "sensors": [
            {"C": s.C.tolist(), "R": s.R, "y_power": s.y_power}
            for s in sc.model.sensors
        ],
        "bits_per_packet": sc.model.bits_per_packet,
    }
    topo = {
        "num_sensors": sc.topology.num_sensors,
        "hears": [[i + 1 for i in g] for g in sc.topology.hears],
    }
    fading = {
        "sensor_to_gateway": _fading_to_json(sc.fading.sensor_to_gateway),
        "relay_to_gateway": _fading_to_json(sc.fading.relay_to_gateway),
        "sensor_to_relay": [_fading_to_json(g) for g in sc.fading.sensor_to_relay],
    }
    out = {
        "name": sc.name,
        "model": model,
        "topology": topo,
        "fading": fading,
        "scheme": sc.scheme,
        "power_mode": sc.power_mode,
        "u_tot_grid": list(sc.u_tot_grid),
        "horizon": sc.horizon,
        "iterations": sc.iterations,
        "seed": sc.seed,
        "burn_in": sc.burn_in,
        "divergence_cap": sc.divergence_cap,
        "solver": {
            "restarts": sc.solver.restarts,
            "max_evals": sc.solver.max_evals,
            "tolerance": sc.solver.tol,
            "seed": sc.solver.seed,
        },
        "stability_samples": sc.stability_samples,
    }
    if sc.fixed_config is not None:
        out["fixed_config"] = [op_to_text(op) for op in sc.fixed_config.operations]
    if sc.fixed_powers is not None:
        out["fixed_powers"] = {
            "sensors": sc.fixed_powers.sensors.tolist(),
            "relays": sc.fixed_powers.relays.tolist(),
        }
    if sc.p0 is not None:
        out["p0"] = np.atleast_2d(sc.p0).tolist()
    return out


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file {path} is not valid JSON: {exc}") from None
    return scenario_from_dict(raw)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")
