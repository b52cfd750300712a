"""Gateway Kalman filter with dropped packets and its expected-covariance map.

Only the measurements the gateway actually reconstructed enter each
update; the update stacks their observation rows jointly. The one-step
expected prior covariance, averaged over the reconstruction pattern for
given link probabilities and relay configuration, is the objective every
selection and power-control routine minimizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import SystemModel
from .netcode import PatternDistribution

__all__ = [
    "FilterState",
    "check_covariance",
    "kalman_step",
    "expected_covariance",
    "pattern_correction",
    "pattern_correction_traces",
    "prediction_trace",
    "special_case_expected_covariance",
    "xor_better_thresholds",
]

_MAX_EXACT_SENSORS = 12  # 2**M pattern sum kept exact up to here


@dataclass(frozen=True, eq=False)
class FilterState:
    """One-step-ahead estimate and its error covariance."""

    estimate: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.estimate, dtype=float))
        P = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if P.shape != (x.size, x.size):
            raise ValueError("covariance shape does not match the estimate")
        object.__setattr__(self, "estimate", x)
        object.__setattr__(self, "covariance", P)


def check_covariance(P: np.ndarray, sym_tol: float = 1e-10, eig_tol: float = 1e-10) -> None:
    """Raise unless P is symmetric (to sym_tol) and PSD (eigenvalues
    above -eig_tol)."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    asym = float(np.max(np.abs(P - P.T))) if P.size else 0.0
    if asym > sym_tol:
        raise ValueError(f"covariance asymmetry {asym:.3e} exceeds {sym_tol:.1e}")
    w = np.linalg.eigvalsh(0.5 * (P + P.T))
    if w.size and float(w[0]) < -eig_tol:
        raise ValueError(f"covariance has eigenvalue {w[0]:.3e} below -{eig_tol:.1e}")


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def kalman_step(
    state: FilterState,
    pattern: np.ndarray,
    measurements: np.ndarray,
    model: SystemModel,
    effective_noise: np.ndarray | None = None,
) -> FilterState:
    """One time-update of the gateway filter.

    ``pattern`` flags the reconstructed sensors; measurement entries
    outside the pattern are ignored. ``effective_noise`` overrides the
    per-sensor effective noise variances (R_i plus quantization noise),
    which the half-bit relaying baseline needs for truncated packets.
    """
    A, Q = model.A, model.Q
    x, P = state.estimate, state.covariance
    sel = np.flatnonzero(np.asarray(pattern, dtype=bool))
    if sel.size == 0:
        return FilterState(A @ x, _sym(A @ P @ A.T + Q))
    C = model.C_matrix[sel]
    noise = model.effective_noise_variances if effective_noise is None \
        else np.asarray(effective_noise, dtype=float)
    S = C @ P @ C.T + np.diag(noise[sel])
    APC = A @ P @ C.T
    K = np.linalg.solve(S, APC.T).T  # S symmetric
    y = np.asarray(measurements, dtype=float)[sel]
    x_next = A @ x + K @ (y - C @ x)
    P_next = _sym(A @ P @ A.T + Q - K @ C @ P @ A.T)
    return FilterState(x_next, P_next)


@lru_cache(maxsize=None)
def _mask_matrix(num_sensors: int) -> np.ndarray:
    """(2**M, M) binary matrix: row ``mask`` flags the sensors in it."""
    idx = np.arange(1 << num_sensors)
    return ((idx[:, None] >> np.arange(num_sensors)) & 1).astype(float)


def pattern_correction(P: np.ndarray, model: SystemModel, mask: int) -> np.ndarray:
    """Covariance reduction A P C' (C P C' + R)^{-1} C P A' contributed by
    updating with exactly the sensors in ``mask``."""
    n = model.state_dim
    if mask == 0:
        return np.zeros((n, n))
    sel = [i for i in range(model.num_sensors) if (mask >> i) & 1]
    C = model.C_matrix[sel]
    R = np.diag(model.effective_noise_variances[sel])
    P = np.atleast_2d(np.asarray(P, dtype=float))
    APC = model.A @ P @ C.T
    return APC @ np.linalg.solve(C @ P @ C.T + R, APC.T)


def pattern_correction_traces(P: np.ndarray, model: SystemModel) -> np.ndarray:
    """Trace of the covariance reduction for every pattern, shape (2**M,).

    Scalar processes use the closed form a^2 P^2 s / (1 + P s) with s the
    summed sensor SNRs of the pattern; it agrees with the solve-based
    path to rounding.
    """
    M = model.num_sensors
    if M > _MAX_EXACT_SENSORS:
        raise ValueError(f"exact pattern sum supported up to {_MAX_EXACT_SENSORS} sensors")
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if model.state_dim == 1:
        a2 = float(model.A[0, 0]) ** 2
        p = float(P[0, 0])
        snr = model.C_matrix[:, 0] ** 2 / model.effective_noise_variances
        s = _mask_matrix(M) @ snr
        with np.errstate(invalid="ignore"):
            out = np.where(s > 0.0, a2 * p * p * s / (1.0 + p * s), 0.0)
        return out
    return np.array(
        [float(np.trace(pattern_correction(P, model, mask))) for mask in range(1 << M)]
    )


def prediction_trace(P: np.ndarray, model: SystemModel) -> float:
    """Trace of A P A' + Q, the no-measurement part of the update."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return float(np.trace(model.A @ P @ model.A.T + model.Q))


def expected_covariance(
    P: np.ndarray, dist: PatternDistribution, model: SystemModel
) -> np.ndarray:
    """Expected one-step-ahead covariance under a pattern distribution.

    A P A' + Q minus the pattern-probability-weighted corrections, summed
    exactly over every pattern with positive probability.
    """
    if dist.num_sensors != model.num_sensors:
        raise ValueError("pattern distribution does not match the sensor count")
    if model.num_sensors > _MAX_EXACT_SENSORS:
        raise ValueError(f"exact pattern sum supported up to {_MAX_EXACT_SENSORS} sensors")
    P = np.atleast_2d(np.asarray(P, dtype=float))
    out = model.A @ P @ model.A.T + model.Q
    for mask in np.flatnonzero(dist.probs > 0.0):
        out = out - dist.probs[mask] * pattern_correction(P, model, int(mask))
    return _sym(out)


def special_case_expected_covariance(
    P: float,
    lam1: float,
    lam2: float,
    snr1: float,
    snr2: float,
    a: float,
    q: float,
    op: str,
) -> float:
    """Closed-form expected covariance for a scalar process, two sensors
    and one relay whose links are error free.

    ``op`` selects the relay behaviour: "fwd1", "fwd2" or "xor". Serves
    as an independent oracle for the general pattern-sum machinery.
    """
    both = snr1 + snr2

    def corr(s: float) -> float:
        return a * a * P * P / (P + 1.0 / s)

    base = a * a * P + q
    if op == "fwd1":
        return base - lam2 * corr(both) - (1.0 - lam2) * corr(snr1)
    if op == "fwd2":
        return base - lam1 * corr(both) - (1.0 - lam1) * corr(snr2)
    if op == "xor":
        return base - (lam1 + lam2 - lam1 * lam2) * corr(both)
    raise ValueError(f"unknown operation {op!r}; expected fwd1, fwd2 or xor")


def xor_better_thresholds(P: float, snr1: float, snr2: float) -> tuple[float, float]:
    """Reception-probability thresholds above which XOR beats forwarding.

    Returns (t1, t2): with error-free relay links, transmitting the XOR
    strictly beats forwarding sensor 1 iff lam1 > t1 and strictly beats
    forwarding sensor 2 iff lam2 > t2.
    """
    if not (P > 0.0 and snr1 > 0.0 and snr2 > 0.0):
        raise ValueError("P and both SNRs must be strictly positive")
    num = P + 1.0 / (snr1 + snr2)
    return num / (P + 1.0 / snr1), num / (P + 1.0 / snr2)
