"""Piecewise-linear pulse parameterisation of the Rabi, Raman and Zeeman controls.

A protocol holds ``m`` samples each of ``|Omega|``, the phase increments of
``Omega``, ``A1`` and ``A2``, plus one Zeeman splitting: ``4 m + 1`` numbers.
The optimiser works on a normalised copy in which every entry lives in
``[0, 1]`` (see :meth:`ProtocolParams.to_vector`).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .operators import PhysicalConfig

N_INIT_MODES = 16
INIT_PHASE_SPREAD = 1.5


@dataclass(frozen=True)
class PulseSample:
    t: float
    omega: complex
    a1: float
    a2: float
    zeeman: float


@dataclass(frozen=True, eq=False)
class ProtocolParams:
    """Physical protocol parameters.

    ``theta_omega``, ``theta_a1`` and ``theta_a2`` are amplitudes in rad/s,
    ``theta_dphi`` are per-sample phase increments in rad and ``theta_b`` is
    the Zeeman splitting ``mu B / h`` in Hz.
    """

    theta_omega: np.ndarray
    theta_dphi: np.ndarray
    theta_a1: np.ndarray
    theta_a2: np.ndarray
    theta_b: float

    def __post_init__(self):
        for name in ("theta_omega", "theta_dphi", "theta_a1", "theta_a2"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "theta_b", float(self.theta_b))
        m = self.m
        if any(len(getattr(self, n)) != m for n in ("theta_dphi", "theta_a1", "theta_a2")):
            raise ValueError("all pulse arrays need the same length")

    @property
    def m(self) -> int:
        return len(self.theta_omega)

    @property
    def size(self) -> int:
        return 4 * self.m + 1

    def as_array(self) -> np.ndarray:
        """Physical values concatenated as ``(omega, dphi, a1, a2, b)``."""
        return np.concatenate([self.theta_omega, self.theta_dphi, self.theta_a1,
                               self.theta_a2, [self.theta_b]])

    def to_vector(self, cfg: PhysicalConfig) -> np.ndarray:
        """Normalised optimiser coordinates, each bound mapped onto [0, 1]."""
        lo, span = normalisation(cfg)
        return (self.as_array() - lo) / span

    @classmethod
    def from_array(cls, values) -> "ProtocolParams":
        values = np.asarray(values, dtype=float)
        m = (len(values) - 1) // 4
        if len(values) != 4 * m + 1:
            raise ValueError("parameter vector must have length 4m+1")
        return cls(values[:m], values[m:2 * m], values[2 * m:3 * m],
                   values[3 * m:4 * m], values[4 * m])

    @classmethod
    def from_vector(cls, u, cfg: PhysicalConfig) -> "ProtocolParams":
        lo, span = normalisation(cfg)
        return cls.from_array(lo + np.asarray(u, dtype=float) * span)

    def to_json(self, cfg: PhysicalConfig | None = None) -> str:
        obj = {
            "theta_omega": self.theta_omega.tolist(),
            "theta_dphi": self.theta_dphi.tolist(),
            "theta_a1": self.theta_a1.tolist(),
            "theta_a2": self.theta_a2.tolist(),
            "theta_b": self.theta_b,
        }
        if cfg is not None:
            obj["config"] = cfg.to_dict()
        return json.dumps(obj, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ProtocolParams":
        obj = json.loads(text)
        return cls(obj["theta_omega"], obj["theta_dphi"], obj["theta_a1"],
                   obj["theta_a2"], obj["theta_b"])


def dphi_bounds(cfg: PhysicalConfig) -> tuple[float, float]:
    """Bounds of one phase increment (rad): slope bound times sample spacing."""
    dt = cfg.tau_s / (cfg.m - 1)
    return cfg.dphi_min * dt, cfg.dphi_max * dt


def normalisation(cfg: PhysicalConfig) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and spans mapping physical parameters onto [0, 1]."""
    m = cfg.m
    dlo, dhi = dphi_bounds(cfg)
    lo = np.concatenate([np.zeros(m), np.full(m, dlo), np.zeros(2 * m), [cfg.b_min]])
    span = np.concatenate([np.full(m, cfg.omega_max), np.full(m, dhi - dlo),
                           np.full(2 * m, cfg.a_max),
                           [cfg.b_max - cfg.b_min if cfg.b_max > cfg.b_min else 1.0]])
    return lo, span


def interpolation_weights(t, tau: float, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower sample index and weight of the upper sample for times ``t``.

    ``s(t) = (1 - p) v[i] + p v[i + 1]``; at ``t = tau`` the pair is
    ``(m - 2, 1.0)`` so that the last sample is reproduced exactly.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > tau):
        raise ValueError("t outside [0, tau]")
    dt = tau / (m - 1)
    x = t / dt
    i = np.minimum(np.floor(x).astype(int), m - 2)
    p = x - i
    return i, p


def interpolate(values, t, tau: float):
    """Linear interpolation of ``m`` equally spaced samples over ``[0, tau]``."""
    values = np.asarray(values, dtype=float)
    i, p = interpolation_weights(t, tau, len(values))
    out = (1 - p) * values[i] + p * values[i + 1]
    return float(out) if out.ndim == 0 else out


def phase_samples(theta_dphi) -> np.ndarray:
    """Cumulative phase samples from increments (``phi_0 = dphi_0``)."""
    return np.cumsum(np.asarray(theta_dphi, dtype=float))


def phase_of(theta_dphi, t, tau: float):
    return interpolate(phase_samples(theta_dphi), t, tau)


def evaluate(theta: ProtocolParams, t: float, cfg: PhysicalConfig) -> PulseSample:
    """Controls at time ``t`` (us)."""
    amp = interpolate(theta.theta_omega, t, cfg.tau)
    phi = phase_of(theta.theta_dphi, t, cfg.tau)
    return PulseSample(
        t=float(t),
        omega=complex(amp * np.exp(-1j * phi)),
        a1=interpolate(theta.theta_a1, t, cfg.tau),
        a2=interpolate(theta.theta_a2, t, cfg.tau),
        zeeman=theta.theta_b,
    )


def pulse_arrays(theta: ProtocolParams, t, cfg: PhysicalConfig):
    """Vectorised controls ``(omega, a1, a2)`` at the times ``t`` (us)."""
    i, p = interpolation_weights(t, cfg.tau, theta.m)

    def s(v):
        return (1 - p) * v[i] + p * v[i + 1]

    amp = s(theta.theta_omega)
    phi = s(phase_samples(theta.theta_dphi))
    return amp * np.exp(-1j * phi), s(theta.theta_a1), s(theta.theta_a2)


def apply_constraints(theta: ProtocolParams, cfg: PhysicalConfig) -> ProtocolParams:
    """Clamp every parameter onto its admissible band (idempotent)."""
    dlo, dhi = dphi_bounds(cfg)
    return ProtocolParams(
        np.clip(theta.theta_omega, 0.0, cfg.omega_max),
        np.clip(theta.theta_dphi, dlo, dhi),
        np.clip(theta.theta_a1, 0.0, cfg.a_max),
        np.clip(theta.theta_a2, 0.0, cfg.a_max),
        min(max(theta.theta_b, cfg.b_min), cfg.b_max),
    )


def satisfies_constraints(theta: ProtocolParams, cfg: PhysicalConfig) -> bool:
    return bool(np.array_equal(apply_constraints(theta, cfg).as_array(), theta.as_array()))


def _slow_envelope(rng: np.random.Generator, t_rel: np.ndarray) -> np.ndarray:
    k = np.arange(1, N_INIT_MODES + 1)
    coeffs = rng.uniform(-1.0, 1.0, size=N_INIT_MODES) / np.sqrt(k)
    return np.sin(np.pi * np.outer(t_rel, k)) @ coeffs


def init_protocol(rng: np.random.Generator, cfg: PhysicalConfig) -> ProtocolParams:
    """Random slowly varying protocol, clamped onto the constraint bands.

    Amplitudes are ``max * min(1, s(t)^2)`` with ``s`` a random sum of 16
    sine modes that vanishes at both ends; phase increments are uniform in
    ``[-1.5, 1.5]`` rad (first one zero) and the Zeeman splitting is uniform
    within its band.
    """
    # exact zeros at both ends; sin(k*pi) is not exactly 0 in floating point
    t_rel = np.linspace(0.0, 1.0, cfg.m)
    env = [_slow_envelope(rng, t_rel) for _ in range(3)]
    for e in env:
        e[0] = e[-1] = 0.0
    omega, a1, a2 = (np.minimum(1.0, e**2) for e in env)
    dphi = rng.uniform(-INIT_PHASE_SPREAD, INIT_PHASE_SPREAD, size=cfg.m)
    dphi[0] = 0.0
    b = rng.uniform(cfg.b_min, cfg.b_max)
    theta = ProtocolParams(cfg.omega_max * omega, dphi, cfg.a_max * a1, cfg.a_max * a2, b)
    return apply_constraints(theta, cfg)


def pulse_table(theta: ProtocolParams, cfg: PhysicalConfig, n_points: int | None = None) -> str:
    """CSV of ``t_us, abs_omega, phase, a1, a2`` on the integrator grid."""
    n_points = cfg.n_steps + 1 if n_points is None else n_points
    t = np.linspace(0.0, cfg.tau, n_points)
    omega, a1, a2 = pulse_arrays(theta, t, cfg)
    phi = phase_of(theta.theta_dphi, t, cfg.tau)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_us", "abs_omega", "phase", "a1", "a2"])
    for row in zip(t, np.abs(omega), phi, a1, a2):
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def max_phase_slope(theta: ProtocolParams, cfg: PhysicalConfig) -> float:
    """Largest ``|d phi / dt|`` of the interpolated phase, in rad/s."""
    dt = cfg.tau_s / (cfg.m - 1)
    steps = np.diff(phase_samples(theta.theta_dphi))
    return float(np.max(np.abs(steps)) / dt) if len(steps) else 0.0

