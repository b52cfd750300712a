"""Kalman filtering over packet-dropping fading links aided by relays
that forward or XOR-combine sensor packets, with per-step configuration
selection, transmit-power control and Monte Carlo studies."""

__version__ = "0.1.0"

from .channel import (
    ChannelState,
    FadingSpec,
    LinkFading,
    LinkProbabilities,
    PowerAllocation,
    Topology,
    bpsk_success_probability,
    link_probabilities,
    sample_channel_state,
)
from .filtering import (
    FilterState,
    check_covariance,
    expected_covariance,
    kalman_step,
    special_case_expected_covariance,
    xor_better_thresholds,
)
from .model import (
    SensorSpec,
    SystemModel,
    Trajectory,
    UnstableProcessError,
    half_bits_noise_factor,
    quantization_noise_factor,
    simulate_trajectory,
    stationary_measurement_power,
    stationary_state_covariance,
)
from .netcode import (
    BooleanExpression,
    LinkOutcome,
    PatternDistribution,
    RelayConfig,
    RelayOperation,
    count_configs,
    enumerate_configs,
    enumerate_outcomes_oracle,
    pattern_distribution,
    recover_measurements,
    theta_expression_table,
)
from .optimize import (
    PowerResult,
    PowerSolverParams,
    SelectionResult,
    StabilityReport,
    joint_select_and_power,
    optimize_power,
    select_config_exhaustive,
    select_config_per_relay,
    stability_check,
)
from .experiments import (
    GridPointResult,
    RunResult,
    emit_results,
    half_bits_step,
    parse_results,
    run_scenario,
)
from .scenario import Scenario, ScenarioError, load_scenario, save_scenario
