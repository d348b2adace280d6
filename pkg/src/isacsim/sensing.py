"""Radar measurement synthesis, polar/Cartesian geometry, Fisher information and CRBs.

Estimation is modelled at the measurement level: every estimate is the truth plus
Gaussian error whose variance depends on the transmit beam through |a^H(theta) f|^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import LIGHT_SPEED, steering_derivative, steering_vector


class UnobservableTarget(ValueError):
    """The beam puts no energy on the target, so its echo carries no information."""


@dataclass(frozen=True)
class EchoParams:
    rcs: float = 1.0
    n_tx: int = 8
    n_rx: int = 8
    matched_gain: float = 16.0
    sigma2_k: float = 10 ** (-114 / 10) / 1e3
    sigma2_m: float = 10 ** (-114 / 10) / 1e3
    rho: float = 1.0
    rho_v: float = 1.0

    @property
    def array_gain(self) -> float:
        return math.sqrt(self.n_tx * self.n_rx)


@dataclass(frozen=True)
class SensingMeasurement:
    delay: float
    doppler: float
    distance: float
    velocity: float
    angle: float
    var_distance: float
    var_velocity: float
    crb_distance: float
    crb_angle: float


@dataclass(frozen=True)
class FimRecord:
    params: np.ndarray       # [theta, d, speed]
    fim: np.ndarray          # 3x3
    covariance: np.ndarray   # diag(sigma2_m, sigma2_tau, sigma2_nu)

    def crb(self) -> np.ndarray:
        return np.diag(np.linalg.inv(self.fim))


def reflection_coefficient(rcs: float, d: float) -> float:
    if d <= 0:
        raise ValueError("distance must be positive")
    return rcs / (2 * d)


def beam_gain(f: np.ndarray, theta: float) -> complex:
    """a^H(theta) f."""
    return complex(np.vdot(steering_vector(theta, len(f)), f))


def beam_gain_derivative(f: np.ndarray, theta: float) -> complex:
    """d/dtheta of a^H(theta) f, analytic."""
    return complex(np.vdot(steering_derivative(theta, len(f)), f))


def _columns(f: np.ndarray) -> np.ndarray:
    """View a beam vector (M,) or beamformer (M, K) as K columns."""
    f = np.asarray(f)
    if f.ndim == 1:
        return f[:, None]
    if f.ndim != 2:
        raise ValueError("beamformer must be a vector or an M x K matrix")
    return f


def beam_power(f: np.ndarray, theta: float) -> float:
    """Sum over beam columns of |a^H(theta) f_k|^2 (independent streams add)."""
    cols = _columns(f)
    g = steering_vector(theta, cols.shape[0]).conj() @ cols
    return float(np.sum(np.abs(g) ** 2))


def beam_derivative_power(f: np.ndarray, theta: float) -> float:
    """Sum over beam columns of |d/dtheta a^H(theta) f_k|^2."""
    cols = _columns(f)
    g = steering_derivative(theta, cols.shape[0]).conj() @ cols
    return float(np.sum(np.abs(g) ** 2))


def measurement_variances(f: np.ndarray, theta: float, d: float,
                          echo: EchoParams) -> tuple[float, float]:
    """Range and radial-velocity error variances; ``inf`` if the beam misses the target.

    ``f`` is one beam or an M x K beamformer whose columns carry independent streams.
    """
    g2 = beam_power(f, theta)
    if g2 == 0.0:
        return math.inf, math.inf
    snr = echo.matched_gain ** 2 * (echo.array_gain * reflection_coefficient(echo.rcs, d)) ** 2 * g2
    return echo.rho ** 2 * echo.sigma2_k / snr, echo.rho_v ** 2 * echo.sigma2_k / snr


def echo_amplitude_derivative(f: np.ndarray, theta: float, d: float,
                              echo: EchoParams) -> complex:
    """d zeta / d theta for the matched-filter output zeta = alpha*rho*G_m*a^H(theta) f."""
    scale = echo.array_gain * reflection_coefficient(echo.rcs, d) * echo.matched_gain
    return scale * beam_gain_derivative(f, theta)


def crb_distance(sigma2_tau: float, c: float = LIGHT_SPEED) -> float:
    if sigma2_tau <= 0:
        raise ValueError("delay variance must be positive")
    return sigma2_tau * c ** 2 / 4


def crb_angle(f: np.ndarray, theta: float, d: float, echo: EchoParams) -> float:
    """Angle CRB from the complex matched-filter output, sigma2_m / (2 |d zeta/d theta|^2).

    For a multi-column beamformer the per-stream informations add.
    """
    scale = echo.array_gain * reflection_coefficient(echo.rcs, d) * echo.matched_gain
    deriv2 = scale ** 2 * beam_derivative_power(f, theta)
    if deriv2 == 0.0:
        return math.inf
    return echo.sigma2_m / (2 * deriv2)


def delay_variance(var_distance: float, c: float = LIGHT_SPEED) -> float:
    return 4 * var_distance / c ** 2


def fim(params: Sequence[float], f: np.ndarray, echo: EchoParams, sigma2_tau: float,
        sigma2_nu: float, c: float = LIGHT_SPEED) -> FimRecord:
    """Fisher information of [theta, d, speed] from the observation (zeta, tau, nu).

    zeta is circular complex Gaussian with variance sigma2_m; the delay tau = 2d/c and
    Doppler nu = 2*speed/c estimates are real Gaussian.
    """
    theta, d, _speed = (float(p) for p in params)
    cov = np.array([echo.sigma2_m, sigma2_tau, sigma2_nu], dtype=float)
    if np.any(cov <= 0) or not np.all(np.isfinite(cov)):
        raise ValueError("observation covariance must be positive definite")
    scale = echo.array_gain * reflection_coefficient(echo.rcs, d) * echo.matched_gain
    J = np.zeros((3, 3))
    for col in _columns(f).T:
        zeta = scale * beam_gain(col, theta)
        # complex part: gradient of the mean w.r.t. [theta, d, speed]
        g = np.array([scale * beam_gain_derivative(col, theta), -zeta / d, 0.0], dtype=complex)
        J += 2 * np.real(np.outer(np.conj(g), g)) / cov[0]
    # real parts: d tau/d d = 2/c, d nu/d speed = 2/c
    J[1, 1] += (2 / c) ** 2 / cov[1]
    J[2, 2] += (2 / c) ** 2 / cov[2]
    return FimRecord(params=np.array([theta, d, _speed]), fim=J, covariance=np.diag(cov))


def polar_to_position(d: float, theta: float) -> tuple[float, float]:
    if d < 0:
        raise ValueError("range must be non-negative")
    return d * math.cos(theta), d * math.sin(theta)


def position_to_polar(x: float, y: float) -> tuple[float, float]:
    if x == 0 and y == 0:
        raise ValueError("polar angle undefined at the origin")
    return math.hypot(x, y), math.atan2(y, x)


def kinematic_prior(d_prev: float, theta_prev: float, step: float) -> tuple[float, float]:
    """Predicted range and angle change after moving ``step`` metres towards -x."""
    if d_prev <= 0:
        raise ValueError("previous range must be positive")
    d2 = d_prev ** 2 + step ** 2 - 2 * d_prev * step * math.cos(theta_prev)
    d = math.sqrt(max(d2, 0.0))
    if d == 0:
        raise ValueError("target collapses onto the array")
    s = step * math.sin(theta_prev) / d
    if abs(s) > 1:
        raise ValueError("inconsistent geometry: |sin(dtheta)| > 1")
    return d, math.asin(s)


def sense_target(d: float, theta: float, speed: float, f: np.ndarray, echo: EchoParams,
                 rng: np.random.Generator, c: float = LIGHT_SPEED) -> SensingMeasurement:
    """Draw one noisy (range, speed, angle) observation of a point target.

    The angle estimate is assumed efficient: its error variance equals the angle CRB.
    Draw order is fixed (range, speed, angle) so a seeded stream is reproducible.
    """
    var_d, var_v = measurement_variances(f, theta, d, echo)
    phi_theta = crb_angle(f, theta, d, echo)
    if not (math.isfinite(var_d) and math.isfinite(phi_theta)):
        raise UnobservableTarget("beam is misaligned with the target")
    d_hat = d + rng.normal(0.0, math.sqrt(var_d))
    v_hat = speed + rng.normal(0.0, math.sqrt(var_v))
    th_hat = theta + rng.normal(0.0, math.sqrt(phi_theta))
    return SensingMeasurement(
        delay=2 * d_hat / c,
        doppler=2 * v_hat / c,
        distance=d_hat,
        velocity=v_hat,
        angle=th_hat,
        var_distance=var_d,
        var_velocity=var_v,
        crb_distance=crb_distance(delay_variance(var_d, c), c) if var_d > 0 else 0.0,
        crb_angle=phi_theta,
    )


@dataclass(frozen=True)
class BoundReport:
    n: int
    mse: dict
    crb: dict
    ratio: dict
    violated: list


def mse_bound_check(estimates: dict, truth: dict, crb: dict, slack: float = 0.9,
                    min_samples: int = 1000) -> BoundReport:
    """Compare empirical MSE per parameter against its CRB (ratio must be >= slack)."""
    mse, ratio, violated = {}, {}, []
    n = None
    for key, est in estimates.items():
        est = np.asarray(est, dtype=float)
        if est.size < min_samples:
            raise ValueError(f"need at least {min_samples} samples for {key}, got {est.size}")
        n = est.size
        mse[key] = float(np.mean((est - truth[key]) ** 2))
        ratio[key] = mse[key] / crb[key]
        if ratio[key] < slack:
            violated.append(key)
    return BoundReport(n=n, mse=mse, crb=dict(crb), ratio=ratio, violated=violated)


def blended_beam(theta: float, n: int, phi: float, phase: complex = 1.0) -> np.ndarray:
    """Unit-norm beam cos(phi)*a(theta) + sin(phi)*u, with u the part of da/dtheta orthogonal to a.

    phi = 0 is the matched (conjugate) beam. Turning towards u sacrifices gain on the
    target, |a^H f| = cos(phi), for a steeper angular slope, which tightens the angle bound.
    ``u`` is phased so both terms add coherently in d(a^H f)/dtheta.
    """
    a = steering_vector(theta, n)
    da = steering_derivative(theta, n)
    perp = da - np.vdot(a, da) * a
    norm = np.linalg.norm(perp)
    if norm < 1e-12 or phi == 0.0:
        return phase * a
    c0 = np.vdot(da, a)
    u = perp / norm * (c0 / abs(c0) if abs(c0) > 0 else 1.0)
    return phase * (math.cos(phi) * a + math.sin(phi) * u)
