from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from relaykf import (
    FadingSpec,
    FilterState,
    LinkFading,
    PowerAllocation,
    RelayConfig,
    RelayOperation,
    RunResult,
    Scenario,
    SensorSpec,
    SystemModel,
    Topology,
    emit_results,
    half_bits_step,
    kalman_step,
    parse_results,
    run_scenario,
)
from relaykf.experiments import GridPointResult, RESULT_COLUMNS
from relaykf.model import half_bits_noise_factor, quantization_noise_factor

from conftest import unit_scalar_model

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def small_scenario(scheme="optimal", **kw):
    topo = Topology.build(2, [(0, 1)])
    model = unit_scalar_model()
    fading = FadingSpec.uniform(
        topo,
        direct=LinkFading("exponential", 1.0),
        relay=LinkFading("exponential", 4.0),
        hear=LinkFading("exponential", 4.0),
    )
    defaults = dict(
        model=model, topology=topo, fading=fading, scheme=scheme,
        power_mode="equal-split", u_tot_grid=(6.0,), horizon=150,
        iterations=6, seed=13, burn_in=30,
    )
    defaults.update(kw)
    return Scenario(**defaults)


class TestDeterminism:
    def test_same_seed_identical_results(self, tmp_path):
        a = run_scenario(small_scenario())
        b = run_scenario(small_scenario())
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_results(a, pa)
        emit_results(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_different_seed_differs(self):
        a = run_scenario(small_scenario())
        b = run_scenario(small_scenario(seed=14))
        assert a.points[0].emp_err_trace != b.points[0].emp_err_trace


class TestNoRelayReduction:
    def test_ignoring_relays_equals_relayless_topology(self):
        """A no-relay run on a relayed topology is bit-identical to the
        same scenario declared without relays."""
        with_relays = run_scenario(small_scenario("no-relay"))
        topo0 = Topology.build(2, ())
        bare = small_scenario("no-relay")
        bare = replace(
            bare, topology=topo0,
            fading=FadingSpec.uniform(topo0, direct=LinkFading("exponential", 1.0)),
        )
        without = run_scenario(bare)
        for p, q in zip(with_relays.points, without.points):
            assert p.emp_err_trace == q.emp_err_trace
            assert p.avg_P_trace == q.avg_P_trace


class TestResultsFile:
    def test_round_trip(self, tmp_path):
        r = run_scenario(small_scenario(u_tot_grid=(4.0, 8.0)))
        path = tmp_path / "r.csv"
        emit_results(r, path)
        rows = parse_results(path)
        assert [c for c in rows[0]] == list(RESULT_COLUMNS)
        assert len(rows) == 2
        for row, point in zip(rows, r.points):
            assert row["scheme"] == r.scheme
            assert row["iterations"] == r.iterations
            assert row["seed"] == r.seed
            for key, val in (("u_tot", point.u_tot),
                             ("avg_power", point.avg_power),
                             ("emp_err_trace", point.emp_err_trace),
                             ("avg_P_trace", point.avg_P_trace)):
                assert row[key] == pytest.approx(val, rel=1e-11)
        # writing back the parsed rows is a fixed point at 12 digits
        again = tmp_path / "r2.csv"
        emit_results(
            RunResult(r.scheme, r.iterations, r.seed, tuple(
                GridPointResult(row["u_tot"], row["avg_power"],
                                row["emp_err_trace"], row["avg_P_trace"],
                                row["diverged"])
                for row in rows
            )), again)
        assert again.read_bytes() == path.read_bytes()

    def test_empty_grid_gives_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_results(RunResult("optimal", 5, 1, ()), path)
        assert path.read_text() == ",".join(RESULT_COLUMNS) + "\n"
        assert parse_results(path) == []

    def test_write_failure_is_reported_with_path(self, tmp_path):
        from relaykf import ScenarioError
        with pytest.raises(ScenarioError, match="no/such"):
            emit_results(RunResult("optimal", 1, 1, ()), tmp_path / "no" / "such.csv")


class TestFilterConsistency:
    def test_empirical_error_matches_covariance_trace(self):
        """On a stable scenario the time-averaged squared error and the
        averaged prior trace estimate the same quantity."""
        r = run_scenario(small_scenario(horizon=600, iterations=24, seed=3))
        p = r.points[0]
        combined = np.hypot(p.emp_err_se, p.avg_P_se)
        assert abs(p.emp_err_trace - p.avg_P_trace) < 3 * combined

    def test_more_power_does_not_hurt(self):
        """The error curve is nonincreasing in the budget beyond noise."""
        r = run_scenario(small_scenario(
            u_tot_grid=(2.0, 8.0, 32.0), horizon=400, iterations=16, seed=5))
        pts = r.points
        for lo, hi in zip(pts, pts[1:]):
            slack = 2 * np.hypot(lo.emp_err_se, hi.emp_err_se)
            assert hi.emp_err_trace <= lo.emp_err_trace + slack


class TestSchemePolicies:
    def test_scheme_ordering_on_small_run(self):
        """Exhaustive selection is never beaten by the per-relay pick or
        the fixed parity scheme on a matched-seed run."""
        results = {
            s: run_scenario(small_scenario(s, horizon=400, iterations=12, seed=21))
            for s in ("optimal", "per-relay", "always-xor")
        }
        o = results["optimal"].points[0]
        p = results["per-relay"].points[0]
        x = results["always-xor"].points[0]
        assert o.avg_P_trace <= p.avg_P_trace + 2 * np.hypot(o.avg_P_se, p.avg_P_se)
        assert p.avg_P_trace <= x.avg_P_trace + 2 * np.hypot(p.avg_P_se, x.avg_P_se)

    def test_fixed_config_scheme(self):
        sc = small_scenario(
            "fixed-config",
            fixed_config=RelayConfig((RelayOperation.forward(0),)),
        )
        r = run_scenario(sc)
        assert np.isfinite(r.points[0].emp_err_trace)

    def test_always_xor_requires_pairs(self):
        topo = Topology.build(2, [(0,)])
        sc = small_scenario("always-xor")
        sc = replace(sc, topology=topo,
                     fading=FadingSpec.uniform(topo))
        from relaykf import ScenarioError
        with pytest.raises(ScenarioError, match="always-xor"):
            run_scenario(sc)

    def test_divergence_flagged(self):
        """A doubling process with dead links trips the covariance cap in
        every iteration."""
        topo = Topology.build(1, ())
        model = SystemModel([[2.0]], [[1.0]], (SensorSpec([1.0], 1.0, 50.0),), 6)
        sc = Scenario(
            model=model, topology=topo,
            fading=FadingSpec.uniform(topo, direct=LinkFading("constant", 1e-9)),
            scheme="no-relay", power_mode="fixed",
            fixed_powers=PowerAllocation(np.array([1.0]), np.empty(0)),
            u_tot_grid=(), horizon=200, iterations=4, seed=2, burn_in=0,
            p0=np.array([[1.0]]),
        )
        r = run_scenario(sc)
        assert r.points[0].diverged
        assert r.points[0].diverged_count == 4

    def test_optimized_power_modes_run(self):
        sc = small_scenario("per-relay", power_mode="optimized",
                            u_tot_grid=(2.0,), horizon=60, iterations=2, burn_in=10)
        r = run_scenario(sc)
        assert r.points[0].avg_power == pytest.approx(2.0, abs=1e-9)

    def test_engine_selection_matches_library_selection(self):
        """The vectorized per-step pick agrees with the reference
        exhaustive selection routine."""
        import relaykf.netcode as nc
        from relaykf import ChannelState, link_probabilities, select_config_exhaustive
        from relaykf.filtering import pattern_correction_traces
        rng = np.random.default_rng(77)
        topo = Topology.build(2, [(0, 1), (0, 1)])
        model = unit_scalar_model()
        powers = PowerAllocation.equal_split(topo, 6.0)
        configs = nc.enumerate_configs(topo)
        for _ in range(20):
            state = ChannelState.from_flat(rng.uniform(0.05, 6.0, topo.num_links), topo)
            P = np.array([[float(rng.uniform(0.3, 3.0))]])
            probs = link_probabilities(state, powers, topo, 6)
            dists = np.stack([
                nc.pattern_distribution_batch(
                    probs.direct[None, :], probs.relay[None, :],
                    tuple(h[None, :] for h in probs.hear), c, topo)[0]
                for c in configs
            ])
            traces = pattern_correction_traces(P, model)
            engine_pick = configs[int(np.argmax(dists @ traces))]
            ref = select_config_exhaustive(P, state, powers, topo, model)
            assert engine_pick == ref.config


class TestHalfBitsScheme:
    def test_direct_reception_is_standard_update(self):
        m = unit_scalar_model()
        state = FilterState(np.zeros(1), np.array([[1.5]]))
        meas = np.array([0.7, -0.2])
        direct = np.array([True, True])
        out = half_bits_step(state, direct, np.array([True, False]), meas,
                             meas + 99.0, m)
        ref = kalman_step(state, direct, meas, m)
        np.testing.assert_array_equal(out.covariance, ref.covariance)
        np.testing.assert_array_equal(out.estimate, ref.estimate)

    def test_truncated_noise_strictly_larger(self):
        for b in (2, 4, 6, 8):
            assert half_bits_noise_factor(b) > quantization_noise_factor(b)

    def test_truncated_only_sensor_uses_larger_noise(self):
        m = unit_scalar_model()
        state = FilterState(np.zeros(1), np.array([[1.5]]))
        meas = np.array([0.7, -0.2])
        full = kalman_step(state, np.array([True, True]), meas, m)
        mixed = half_bits_step(state, np.array([True, False]),
                               np.array([False, True]), meas, meas, m)
        assert mixed.covariance[0, 0] > full.covariance[0, 0]

    def test_half_bits_between_no_relay_and_selection(self):
        """With both relay copies available the truncated-forwarding
        baseline clearly beats having no relay, and cannot beat the
        adaptive selection by more than noise."""
        kw = dict(horizon=500, iterations=16, seed=31, u_tot_grid=(6.0,))
        hb = run_scenario(small_scenario("half-bits", **kw)).points[0]
        nr = run_scenario(small_scenario("no-relay", **kw)).points[0]
        op = run_scenario(small_scenario("optimal", **kw)).points[0]
        assert hb.emp_err_trace < nr.emp_err_trace + 2 * np.hypot(hb.emp_err_se, nr.emp_err_se)
        assert op.emp_err_trace <= hb.emp_err_trace + 2 * np.hypot(hb.emp_err_se, op.emp_err_se)

    def test_odd_bit_width_rejected(self):
        from relaykf import ScenarioError
        m = SystemModel([[0.95]], [[1.0]],
                        (SensorSpec([1.0], 1.0), SensorSpec([1.0], 1.0)), 5)
        sc = small_scenario("half-bits")
        sc = replace(sc, model=m)
        with pytest.raises(ScenarioError, match="even"):
            run_scenario(sc)


class TestScenarioFiles:
    def test_shipped_scenarios_load_and_validate(self):
        from relaykf import load_scenario
        for name in ("selection_study", "power_study_relay", "power_study_norelay",
                     "stability_bounded", "stability_divergent", "smoke"):
            sc = load_scenario(SCENARIO_DIR / f"{name}.json")
            sc.validate()

    def test_save_load_round_trip(self, tmp_path):
        from relaykf import load_scenario, save_scenario
        sc = load_scenario(SCENARIO_DIR / "stability_bounded.json")
        path = tmp_path / "copy.json"
        save_scenario(sc, path)
        sc2 = load_scenario(path)
        assert sc2.scheme == sc.scheme
        assert sc2.u_tot_grid == sc.u_tot_grid
        assert sc2.fixed_config == sc.fixed_config
        np.testing.assert_array_equal(sc2.model.A, sc.model.A)
        np.testing.assert_array_equal(sc2.fixed_powers.flat, sc.fixed_powers.flat)

    def test_one_based_indices_in_files(self):
        from relaykf import load_scenario
        sc = load_scenario(SCENARIO_DIR / "stability_bounded.json")
        assert sc.topology.hears == ((0, 1),)
        assert sc.fixed_config.operations[0].sensors == (0,)

    def test_validation_failures(self):
        from relaykf import ScenarioError
        sc = small_scenario()
        with pytest.raises(ScenarioError, match="scheme"):
            replace(sc, scheme="nonsense").validate()
        with pytest.raises(ScenarioError, match="power mode"):
            replace(sc, power_mode="solar").validate()
        with pytest.raises(ScenarioError, match="burn_in"):
            replace(sc, burn_in=150).validate()
        with pytest.raises(ScenarioError, match="fixed_config"):
            replace(sc, scheme="fixed-config").validate()
        with pytest.raises(ScenarioError, match="p0"):
            replace(sc, model=SystemModel(
                [[1.1]], [[1.0]], (SensorSpec([1.0], 1.0, 9.0),) * 2, 6)).validate()

    def test_operation_text_forms(self):
        from relaykf.scenario import op_from_text, op_to_text
        assert op_to_text(RelayOperation.forward(0)) == "fwd 1"
        assert op_to_text(RelayOperation.xor((0, 2))) == "xor 1,3"
        assert op_from_text("fwd 2").sensors == (1,)
        assert op_from_text("xor 1, 2").sensors == (0, 1)
        from relaykf import ScenarioError
        with pytest.raises(ScenarioError):
            op_from_text("forward 1")
        with pytest.raises(ScenarioError):
            op_from_text("xor")
