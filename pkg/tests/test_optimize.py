import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ndtr

from relaykf import (
    ChannelState,
    FadingSpec,
    LinkFading,
    PowerAllocation,
    RelayConfig,
    RelayOperation,
    SensorSpec,
    SystemModel,
    Topology,
    joint_select_and_power,
    optimize_power,
    select_config_exhaustive,
    select_config_per_relay,
    stability_check,
)
from relaykf.optimize import PowerSolverParams, _project_simplex, full_rank_patterns

from conftest import (
    equal_powers,
    gain_for_probability,
    perfect_relay_state,
    random_model,
    unit_scalar_model,
)

P1 = np.array([[1.0]])


class TestExhaustiveSelection:
    def test_chooses_xor_when_both_links_good(self, topo21):
        """Reception probabilities above the 0.75 threshold favour the
        parity operation."""
        m = unit_scalar_model()
        g = gain_for_probability(0.9)
        sel = select_config_exhaustive(
            P1, perfect_relay_state([g, g]), equal_powers(topo21, 3.0), topo21, m)
        # equal split power is 1.0 per node, so the direct lambdas are 0.9
        assert sel.config.operations[0].sensors == (0, 1)

    def test_forwards_the_weak_sensor(self, topo21):
        m = unit_scalar_model()
        state = perfect_relay_state(
            [gain_for_probability(0.1), gain_for_probability(0.9)])
        sel = select_config_exhaustive(
            P1, state, equal_powers(topo21, 3.0), topo21, m)
        assert sel.config.operations[0].sensors == (0,)

    def test_minimum_dominates_table(self, topo22):
        rng = np.random.default_rng(1)
        m = unit_scalar_model()
        for _ in range(10):
            state = ChannelState.from_flat(rng.uniform(0.1, 8.0, topo22.num_links), topo22)
            sel = select_config_exhaustive(
                np.array([[float(rng.uniform(0.3, 3.0))]]), state,
                equal_powers(topo22, 4.0), topo22, m)
            assert all(sel.objective <= obj for _, obj in sel.table)
            assert sel.evaluations == 9

    def test_singleton_configuration_set(self):
        topo = Topology.build(1, [(0,)])
        m = unit_scalar_model(num_sensors=1)
        state = ChannelState(np.array([1.0]), np.array([2.0]), (np.array([3.0]),))
        sel = select_config_exhaustive(P1, state, equal_powers(topo, 2.0), topo, m)
        assert sel.evaluations == 1
        assert sel.config.operations[0].is_forward


class TestPerRelaySelection:
    def test_single_relay_coincides_with_exhaustive(self, topo21):
        rng = np.random.default_rng(3)
        m = unit_scalar_model()
        for _ in range(20):
            state = ChannelState.from_flat(rng.uniform(0.05, 8.0, topo21.num_links), topo21)
            P = np.array([[float(rng.uniform(0.3, 3.0))]])
            a = select_config_exhaustive(P, state, equal_powers(topo21, 3.0), topo21, m)
            b = select_config_per_relay(P, state, equal_powers(topo21, 3.0), topo21, m)
            assert a.config == b.config
            assert a.objective == pytest.approx(b.objective, rel=1e-12)

    def test_evaluation_count_scales_additively(self):
        """Three relays hearing two sensors each: 9 evaluations against
        27 for the exhaustive product."""
        topo = Topology.build(2, [(0, 1)] * 3)
        m = unit_scalar_model()
        state = ChannelState.from_flat(np.full(topo.num_links, 2.0), topo)
        sub = select_config_per_relay(P1, state, equal_powers(topo, 5.0), topo, m)
        full = select_config_exhaustive(P1, state, equal_powers(topo, 5.0), topo, m)
        assert sub.evaluations == 9
        assert full.evaluations == 27

    def test_never_beats_exhaustive(self, topo22):
        rng = np.random.default_rng(5)
        m = unit_scalar_model()
        for _ in range(40):
            state = ChannelState.from_flat(rng.uniform(0.05, 8.0, topo22.num_links), topo22)
            P = np.array([[float(rng.uniform(0.3, 3.0))]])
            full = select_config_exhaustive(P, state, equal_powers(topo22, 4.0), topo22, m)
            sub = select_config_per_relay(P, state, equal_powers(topo22, 4.0), topo22, m)
            assert sub.objective >= full.objective - 1e-12


class TestOptimizePower:
    def test_single_node_gets_everything(self):
        topo = Topology.build(1, ())
        m = unit_scalar_model(num_sensors=1)
        state = ChannelState(np.array([2.0]), np.empty(0), ())
        pr = optimize_power(P1, state, RelayConfig(()), topo, m, 3.0)
        np.testing.assert_allclose(pr.allocation.sensors, [3.0])

    def test_symmetric_instance_against_grid_oracle(self):
        """Two identical sensors, no relay: a fine 1-D sweep over the
        split fraction bounds the optimum."""
        topo = Topology.build(2, ())
        m = unit_scalar_model()
        state = ChannelState(np.array([1.0, 1.0]), np.empty(0), ())
        u_tot = 4.0
        pr = optimize_power(P1, state, RelayConfig(()), topo, m, u_tot)

        def objective(frac):
            from relaykf.optimize import _power_objective
            f = _power_objective(P1, state, RelayConfig(()), topo, m)
            return f([frac * u_tot, (1.0 - frac) * u_tot])

        grid_best = min(objective(f) for f in np.linspace(0.0, 1.0, 2001))
        assert pr.objective <= grid_best + 1e-9
        equal = objective(0.5)
        assert pr.objective <= equal + 1e-12

    def test_never_worse_than_equal_split(self, topo21):
        rng = np.random.default_rng(11)
        m = unit_scalar_model()
        params = PowerSolverParams(restarts=4, max_evals=60)
        from relaykf.optimize import _power_objective
        for _ in range(25):
            state = ChannelState.from_flat(rng.uniform(0.05, 6.0, topo21.num_links), topo21)
            config = RelayConfig((RelayOperation.forward(int(rng.integers(2))),))
            u_tot = float(rng.uniform(0.5, 6.0))
            P = np.array([[float(rng.uniform(0.3, 3.0))]])
            pr = optimize_power(P, state, config, topo21, m, u_tot, params)
            equal = _power_objective(P, state, config, topo21, m)(
                [u_tot / 3.0] * 3)
            assert pr.objective <= equal + 1e-12
            assert np.all(pr.allocation.flat >= 0.0)
            assert pr.allocation.total == pytest.approx(u_tot, abs=1e-9)

    def test_deterministic(self, topo21):
        m = unit_scalar_model()
        state = ChannelState.from_flat(np.linspace(0.5, 3.0, topo21.num_links), topo21)
        a = optimize_power(P1, state, RelayConfig((RelayOperation.xor((0, 1)),)),
                           topo21, m, 2.0)
        b = optimize_power(P1, state, RelayConfig((RelayOperation.xor((0, 1)),)),
                           topo21, m, 2.0)
        np.testing.assert_array_equal(a.allocation.flat, b.allocation.flat)
        assert a.objective == b.objective

    def test_rejects_nonpositive_budget(self, topo21):
        m = unit_scalar_model()
        state = ChannelState.from_flat(np.ones(topo21.num_links), topo21)
        with pytest.raises(ValueError):
            optimize_power(P1, state, RelayConfig((RelayOperation.forward(0),)),
                           topo21, m, 0.0)

    def test_simplex_projection(self):
        np.testing.assert_allclose(_project_simplex([2.0, 2.0], 2.0), [1.0, 1.0])
        np.testing.assert_allclose(_project_simplex([5.0, -3.0], 2.0), [2.0, 0.0])
        p = _project_simplex([0.3, 0.9, -0.2, 0.5], 1.0)
        assert sum(p) == pytest.approx(1.0, abs=1e-12)
        assert min(p) >= 0.0


class TestJointSelection:
    def test_suboptimal_never_beats_exact(self, topo21):
        rng = np.random.default_rng(13)
        m = unit_scalar_model()
        params = PowerSolverParams(restarts=3, max_evals=50)
        for _ in range(8):
            state = ChannelState.from_flat(rng.uniform(0.05, 6.0, topo21.num_links), topo21)
            P = np.array([[float(rng.uniform(0.3, 3.0))]])
            _, exact = joint_select_and_power(P, state, topo21, m, 2.0, "exact", params)
            _, sub = joint_select_and_power(P, state, topo21, m, 2.0, "suboptimal", params)
            assert sub.objective >= exact.objective - 1e-12

    def test_no_relays_degenerates_to_power_control(self):
        topo = Topology.build(2, ())
        m = unit_scalar_model()
        state = ChannelState(np.array([1.0, 2.0]), np.empty(0), ())
        sel, pr = joint_select_and_power(P1, state, topo, m, 2.0, "exact")
        assert sel.config == RelayConfig(())
        assert pr.allocation.total == pytest.approx(2.0, abs=1e-9)

    def test_unknown_mode_rejected(self, topo21):
        m = unit_scalar_model()
        state = ChannelState.from_flat(np.ones(topo21.num_links), topo21)
        with pytest.raises(ValueError):
            joint_select_and_power(P1, state, topo21, m, 1.0, "greedy")


def two_state_model():
    """Planar process where full rank needs both sensors."""
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    Q = np.eye(2)
    sensors = (SensorSpec([1.0, 0.0], 1.0, 20.0), SensorSpec([0.0, 1.0], 1.0, 20.0))
    return SystemModel(A, Q, sensors, 6)


class TestStabilityCheck:
    def test_perfect_links_certify(self, topo21):
        m = two_state_model()
        fading = FadingSpec.uniform(topo21, direct=LinkFading("perfect"),
                                    relay=LinkFading("perfect"),
                                    hear=LinkFading("perfect"))
        rep = stability_check(
            m, fading, topo21, RelayConfig((RelayOperation.forward(0),)),
            PowerAllocation(np.ones(2), np.ones(1)), 1000)
        assert rep.verdict == "satisfied"
        assert rep.product == pytest.approx(0.0, abs=1e-12)

    def test_blocked_links_violate(self):
        """Doubling process with essentially dead links."""
        topo = Topology.build(1, ())
        m = SystemModel([[2.0]], [[1.0]], (SensorSpec([1.0], 1.0, 50.0),), 6)
        fading = FadingSpec.uniform(topo, direct=LinkFading("constant", 1e-9))
        rep = stability_check(
            m, fading, topo, RelayConfig(()),
            PowerAllocation(np.array([1.0]), np.empty(0)), 1000)
        assert rep.verdict == "violated"
        assert rep.product > 1.0

    def test_outage_matches_quadrature_oracle(self, topo21):
        """Always-forward-sensor-1 policy: the outage factorizes over the
        independent links, so 1-D quadrature gives the exact mean."""
        m = two_state_model()
        fading = FadingSpec.uniform(topo21, direct=LinkFading("exponential", 1.0),
                                    relay=LinkFading("exponential", 1.0),
                                    hear=LinkFading("exponential", 1.0))
        powers = PowerAllocation(np.ones(2), np.ones(1))
        rep = stability_check(
            m, fading, topo21, RelayConfig((RelayOperation.forward(0),)),
            powers, 40_000, seed=5)

        def mean_p(mean):
            val, _ = quad(lambda g: ndtr(np.sqrt(g)) ** 6 * np.exp(-g / mean) / mean,
                          0.0, np.inf, limit=200)
            return val

        p1 = p2 = pg = ph = mean_p(1.0)
        expected = 1.0 - p1 * p2 - (1.0 - p1) * p2 * pg * ph
        se = (rep.ci_high - rep.ci_low) / (2 * 1.96) / rep.spectral_norm_sq
        assert abs(rep.outage_mean - expected) < 4 * se

    def test_ci_shrinks_like_sqrt_n(self, topo21):
        m = two_state_model()
        fading = FadingSpec.uniform(topo21)
        powers = PowerAllocation(np.ones(2), np.ones(1))
        w = {}
        for n in (2000, 8000):
            rep = stability_check(
                m, fading, topo21, RelayConfig((RelayOperation.forward(0),)),
                powers, n, seed=9)
            w[n] = rep.ci_high - rep.ci_low
        assert w[8000] == pytest.approx(w[2000] / 2.0, rel=0.25)

    def test_rejects_policy_with_extra_inputs(self, topo21):
        m = two_state_model()
        fading = FadingSpec.uniform(topo21)
        powers = PowerAllocation(np.ones(2), np.ones(1))
        with pytest.raises(ValueError, match="channel state alone"):
            stability_check(m, fading, topo21,
                            lambda state, P: RelayConfig((RelayOperation.forward(0),)),
                            powers, 1000)

    def test_accepts_channel_policy(self, topo21):
        m = two_state_model()
        fading = FadingSpec.uniform(topo21)
        powers = PowerAllocation(np.ones(2), np.ones(1))

        def policy(state):
            i = int(state.direct[0] < state.direct[1])
            return RelayConfig((RelayOperation.forward(i),))

        rep = stability_check(m, fading, topo21, policy, powers, 2000, seed=3)
        assert rep.verdict in ("satisfied", "inconclusive", "violated")

    def test_requires_enough_samples(self, topo21):
        m = two_state_model()
        with pytest.raises(ValueError, match="1000"):
            stability_check(m, FadingSpec.uniform(topo21), topo21,
                            RelayConfig((RelayOperation.forward(0),)),
                            PowerAllocation(np.ones(2), np.ones(1)), 10)

    def test_full_rank_patterns(self):
        m = two_state_model()
        ok = full_rank_patterns(m)
        np.testing.assert_array_equal(ok, [False, False, False, True])
        m1 = unit_scalar_model()
        np.testing.assert_array_equal(full_rank_patterns(m1), [False, True, True, True])
