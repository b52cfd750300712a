"""Linear process model, scalar sensors, and quantization-noise bookkeeping.

The process is x[k+1] = A x[k] + w[k] with w ~ N(0, Q). Each sensor i
produces y_i[k] = C_i x[k] + v_i[k], which is quantized into a b-bit
packet before transmission. Quantization is modelled as additive noise
whose variance is a fixed fraction of the measurement's second moment,
so only the variance bookkeeping appears here, never an actual codebook.
"""

from __future__ import annotations

import math

import numpy as np
from dataclasses import dataclass
from scipy import linalg as sla

__all__ = [
    "UnstableProcessError",
    "SensorSpec",
    "SystemModel",
    "Trajectory",
    "quantization_noise_factor",
    "half_bits_noise_factor",
    "spectral_radius",
    "stationary_state_covariance",
    "stationary_measurement_power",
    "simulate_trajectory",
]


class UnstableProcessError(ValueError):
    """Raised when a stationary moment is requested for a process with
    spectral radius >= 1."""


def quantization_noise_factor(b: int) -> float:
    """Relative variance of b-bit uniform quantization noise.

    Returns 4*b*ln(2) / (3 * 2**(2b)), the factor multiplying E[y^2] to
    give the quantization-noise variance. Strictly decreasing in b.
    """
    if int(b) != b or b < 1:
        raise ValueError(f"bits per packet must be a positive integer, got {b!r}")
    b = int(b)
    return 4.0 * b * math.log(2.0) / (3.0 * 2.0 ** (2 * b))


def half_bits_noise_factor(b: int) -> float:
    """Noise factor after a packet is truncated to its b/2 most
    significant bits; equals ``quantization_noise_factor(b // 2)``.
    """
    if int(b) != b or b < 2 or b % 2 != 0:
        raise ValueError(f"bit truncation needs an even bit width >= 2, got {b!r}")
    b = int(b)
    return 2.0 * b * math.log(2.0) / (3.0 * 2.0 ** b)


def spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(A, dtype=float)))))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SensorSpec:
    """One scalar-output sensor.

    C is the 1 x n observation row, R the measurement-noise variance and
    y_power the stationary second moment E[y^2] used to size the
    quantization noise. When y_power is omitted it is filled from the
    model's stationary state covariance at construction of SystemModel.
    """

    C: np.ndarray
    R: float
    y_power: float | None = None

    def __post_init__(self):
        C = _readonly(np.atleast_1d(np.asarray(self.C, dtype=float)).ravel())
        object.__setattr__(self, "C", C)
        if not np.all(np.isfinite(C)):
            raise ValueError("observation row must be finite")
        if not (self.R >= 0.0):
            raise ValueError(f"measurement-noise variance must be >= 0, got {self.R}")
        if self.y_power is not None:
            if not (self.y_power > 0.0):
                raise ValueError("y_power must be strictly positive")
            if self.y_power < self.R:
                raise ValueError(
                    "y_power is the second moment of y and cannot be smaller "
                    f"than the noise variance ({self.y_power} < {self.R})"
                )


def _check_spd(Q: np.ndarray, name: str) -> None:
    if not np.allclose(Q, Q.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) <= 0.0:
        raise ValueError(f"{name} must be positive definite")


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Process matrices, sensor set and packet bit width.

    Immutable after construction; sensors with y_power=None get the
    stationary value C Sigma C' + R, which requires a stable A.
    """

    A: np.ndarray
    Q: np.ndarray
    sensors: tuple[SensorSpec, ...]
    bits_per_packet: int

    def __post_init__(self):
        A = _readonly(np.atleast_2d(self.A))
        Q = _readonly(np.atleast_2d(self.Q))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)
        n = A.shape[0]
        if A.shape != (n, n) or Q.shape != (n, n):
            raise ValueError("A and Q must be square matrices of the same size")
        _check_spd(Q, "Q")
        if int(self.bits_per_packet) != self.bits_per_packet or self.bits_per_packet < 1:
            raise ValueError("bits_per_packet must be a positive integer")
        object.__setattr__(self, "bits_per_packet", int(self.bits_per_packet))
        sensors = tuple(self.sensors)
        if not sensors:
            raise ValueError("at least one sensor is required")
        for s in sensors:
            if s.C.shape != (n,):
                raise ValueError(
                    f"observation row has length {s.C.shape[0]}, state dimension is {n}"
                )
        if any(s.y_power is None for s in sensors):
            sigma = stationary_state_covariance(A, Q)
            sensors = tuple(
                s if s.y_power is not None
                else SensorSpec(s.C, s.R, float(s.C @ sigma @ s.C) + s.R)
                for s in sensors
            )
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "_C", _readonly(np.vstack([s.C for s in sensors])))
        object.__setattr__(self, "_R", _readonly([s.R for s in sensors]))
        object.__setattr__(self, "_ypow", _readonly([s.y_power for s in sensors]))

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def num_sensors(self) -> int:
        return len(self.sensors)

    @property
    def C_matrix(self) -> np.ndarray:
        """All observation rows stacked, shape (M, n)."""
        return self._C

    @property
    def noise_variances(self) -> np.ndarray:
        return self._R

    @property
    def measurement_powers(self) -> np.ndarray:
        return self._ypow

    @property
    def quantization_factor(self) -> float:
        return quantization_noise_factor(self.bits_per_packet)

    @property
    def effective_noise_variances(self) -> np.ndarray:
        """Per-sensor R_i plus quantization-noise variance."""
        return self._R + self.quantization_factor * self._ypow


def stationary_state_covariance(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve Sigma = A Sigma A' + Q; raises UnstableProcessError if
    the spectral radius of A is not below one."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise UnstableProcessError(
            f"unstable process: spectral radius {rho:.6g} >= 1, "
            "no stationary covariance exists"
        )
    sigma = sla.solve_discrete_lyapunov(A, Q)
    return 0.5 * (sigma + sigma.T)


def stationary_measurement_power(model: SystemModel, sensor_index: int) -> float:
    """Stationary E[y_i^2] = C_i Sigma C_i' + R_i from the Lyapunov solve.

    Requires a stable A; callers with an unstable process must supply
    y_power explicitly on the sensor instead.
    """
    sigma = stationary_state_covariance(model.A, model.Q)
    s = model.sensors[sensor_index]
    return float(s.C @ sigma @ s.C) + s.R


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States x[k] (shape T x n) and quantized measurements (shape M x T)
    sampled at the same time indices."""

    states: np.ndarray
    measurements: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", _readonly(self.states))
        object.__setattr__(self, "measurements", _readonly(self.measurements))
        if self.states.shape[0] != self.measurements.shape[1]:
            raise ValueError("states and measurements must cover the same horizon")

    @property
    def horizon(self) -> int:
        return self.states.shape[0]


def _psd_factor(Q: np.ndarray) -> np.ndarray:
    """Factor L with L L' = Q for a PSD matrix (eigendecomposition based,
    tolerates zero eigenvalues unlike Cholesky)."""
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)


def simulate_trajectory(
    model: SystemModel,
    horizon: int,
    seed: int | np.random.Generator,
    x0: np.ndarray | None = None,
) -> Trajectory:
    """Sample one process trajectory and its quantized measurements.

    x0 defaults to a zero-mean draw with the stationary covariance when A
    is stable, otherwise to the zero vector. Deterministic for a fixed
    seed or generator state.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n, M = model.state_dim, model.num_sensors
    T = int(horizon)

    if x0 is not None:
        x_start = np.asarray(x0, dtype=float).reshape(n)
    elif spectral_radius(model.A) < 1.0:
        L0 = _psd_factor(stationary_state_covariance(model.A, model.Q))
        x_start = L0 @ rng.standard_normal(n)
    else:
        x_start = np.zeros(n)

    Lq = _psd_factor(model.Q)
    w = rng.standard_normal((T, n)) @ Lq.T
    v = rng.standard_normal((M, T)) * np.sqrt(model.noise_variances)[:, None]
    q = rng.standard_normal((M, T)) * np.sqrt(
        model.quantization_factor * model.measurement_powers
    )[:, None]

    states = np.empty((T, n))
    states[0] = x_start
    for k in range(T - 1):
        states[k + 1] = model.A @ states[k] + w[k]
    meas = model.C_matrix @ states.T + v + q
    return Trajectory(states, meas)
