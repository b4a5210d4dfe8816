"""Fixed-step RK4 integration of the Lindblad and Schroedinger equations.

These are the reference integrators: they work on the full 16-dimensional
space and apply the four RK4 stages directly to the state. The optimiser
uses the faster but equivalent machinery in :mod:`rydgate.engine`.

Time is measured in seconds inside the integrators (Hamiltonians are in
rad/s); protocol times are in microseconds.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .operators import (
    DIM,
    LOGICAL_INDICES,
    REDUCED_LOGICAL_INDICES,
    PhysicalConfig,
    build_lindblad_ops,
    control_operators,
)
from .protocol import ProtocolParams, pulse_arrays


class NonConvergenceError(RuntimeError):
    """Raised when an integration drifts away from a physical state."""


@dataclass(frozen=True, eq=False)
class EvolutionSpec:
    """What to integrate.

    ``v`` is the interaction ``V/hbar`` in rad/s: ``None`` uses the value
    implied by ``cfg``, a float is held constant, and a 1-d array is read
    as a piecewise-constant trajectory on equal segments of ``[0, tau]``.
    """

    theta: ProtocolParams
    cfg: PhysicalConfig
    v: float | np.ndarray | None = None
    mode: Literal["density", "propagator"] = "density"

    def __post_init__(self):
        if self.mode == "propagator" and self.cfg.gamma != 0:
            raise ValueError("propagator mode needs gamma == 0")
        if self.mode not in ("density", "propagator"):
            raise ValueError(f"unknown mode {self.mode!r}")
        v_steps(self.v, self.cfg)


def v_steps(v, cfg: PhysicalConfig) -> np.ndarray:
    """Interaction per RK4 step (rad/s), shape ``(n_steps,)``."""
    n = cfg.n_steps
    if v is None:
        v = cfg.v_over_hbar
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if n % len(arr):
        raise ValueError("n_steps must be divisible by the trajectory length")
    return np.repeat(arr, n // len(arr))


def stable_n_steps(cfg: PhysicalConfig, v_max: float | None = None, tol: float = 1e-7,
                   multiple: int = 512) -> int:
    """Smallest step count (>= ``cfg.n_steps``) keeping RK4 norm drift below ``tol``.

    For a phase rotation ``exp(-i x)`` per step, RK4 loses norm at order
    ``x**6 / 144``; ``x`` is bounded using the largest coupling scale
    (interaction plus drive amplitudes plus Zeeman splitting).
    """
    v = cfg.v_over_hbar if v_max is None else v_max
    rate = abs(v) + cfg.omega_max + cfg.a_max + 2 * np.pi * max(abs(cfg.b_min), abs(cfg.b_max))
    theta = rate * cfg.tau_s
    n = int(np.ceil((theta**6 / (144.0 * tol)) ** 0.2))
    n = max(n, cfg.n_steps)
    return int(-(-n // multiple) * multiple)


def half_step_times(cfg: PhysicalConfig) -> np.ndarray:
    """Times (us) of all RK4 evaluation points ``t_k, t_k + h/2``."""
    t = np.arange(2 * cfg.n_steps + 1) * (cfg.tau / (2 * cfg.n_steps))
    t[-1] = cfg.tau
    return t


def step_hamiltonians(theta: ProtocolParams, cfg: PhysicalConfig, v=None,
                      reduced: bool = False) -> np.ndarray:
    """Hamiltonians at the three RK4 points of every step.

    Returns an array of shape ``(n_steps, 3, d, d)`` in rad/s.
    """
    ops = control_operators(reduced)
    omega, a1, a2 = pulse_arrays(theta, half_step_times(cfg), cfg)
    h_pts = (theta.theta_b * ops["hz"] + omega.real[:, None, None] * ops["hx"]
             + omega.imag[:, None, None] * ops["hy"] + a1[:, None, None] * ops["ha1"]
             + a2[:, None, None] * ops["ha2"])
    n = cfg.n_steps
    idx = 2 * np.arange(n)[:, None] + np.arange(3)[None, :]
    h = h_pts[idx]
    h[..., 0, 0] += v_steps(v, cfg)[:, None]
    return h


def lindblad_rhs(rho: np.ndarray, h_over_hbar: np.ndarray, lindblad_ops) -> np.ndarray:
    """``-i[H, rho] + sum_L (L rho L^+ - {L^+ L, rho} / 2)``."""
    out = -1j * (h_over_hbar @ rho - rho @ h_over_hbar)
    for op in lindblad_ops:
        op_dag = op.conj().T
        ldl = op_dag @ op
        out += op @ rho @ op_dag - 0.5 * (ldl @ rho + rho @ ldl)
    return out


def _rk4(y, rhs, hs, dt, keep=None):
    """Classical RK4 over steps with Hamiltonian triples ``hs[k]``."""
    kept = [] if keep else None
    if keep:
        kept.append(y)
    for k in range(len(hs)):
        h0, hm, h1 = hs[k]
        k1 = rhs(y, h0)
        k2 = rhs(y + 0.5 * dt * k1, hm)
        k3 = rhs(y + 0.5 * dt * k2, hm)
        k4 = rhs(y + dt * k3, h1)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if keep and (k + 1) % keep == 0:
            kept.append(y)
    return y, kept


def _run_density(rho0, spec: EvolutionSpec, stride=None):
    cfg = spec.cfg
    if spec.mode != "density":
        raise ValueError("propagate_density needs mode='density'")
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (DIM, DIM):
        raise ValueError("rho0 must be 16x16")
    hs = step_hamiltonians(spec.theta, cfg, spec.v)
    ops = [op for op in build_lindblad_ops(cfg) if np.any(op)]
    ldl = sum((op.conj().T @ op for op in ops), np.zeros((DIM, DIM), dtype=complex))
    jumps = np.array(ops) if ops else None

    def rhs(rho, h):
        out = -1j * (h @ rho - rho @ h)
        if jumps is not None:
            out += (jumps @ rho @ jumps.conj().transpose(0, 2, 1)).sum(axis=0)
            out -= 0.5 * (ldl @ rho + rho @ ldl)
        return out

    rho, kept = _rk4(rho0, rhs, hs, cfg.tau_s / cfg.n_steps, keep=stride)
    tr0 = np.trace(rho0).real
    if abs(np.trace(rho).real - tr0) > 1e-6 or np.linalg.norm(rho - rho.conj().T) > 1e-6:
        raise NonConvergenceError("density matrix drifted: reduce the step size")
    return rho, kept


def propagate_density(rho0: np.ndarray, spec: EvolutionSpec) -> np.ndarray:
    """Final density matrix ``rho(tau)`` from RK4 on the master equation."""
    return _run_density(rho0, spec)[0]


def population_trajectory(rho0: np.ndarray, spec: EvolutionSpec, stride: int = 64):
    """Times (us) and basis populations every ``stride`` steps."""
    _, kept = _run_density(rho0, spec, stride=stride)
    pops = np.array([np.diag(r).real for r in kept])
    t = np.arange(len(kept)) * stride * spec.cfg.tau / spec.cfg.n_steps
    return t, pops


def trajectory_csv(t, pops) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_us"] + [f"p{k}" for k in range(pops.shape[1])])
    for tk, row in zip(t, pops):
        w.writerow([repr(float(tk))] + [repr(float(x)) for x in row])
    return buf.getvalue()


def propagate_unitary(spec: EvolutionSpec, reduced: bool = False) -> np.ndarray:
    """Propagator ``U(tau)`` from RK4 on ``dU/dt = -i H U``, ``U(0) = I``."""
    cfg = spec.cfg
    if cfg.gamma != 0:
        raise ValueError("propagate_unitary needs gamma == 0")
    hs = step_hamiltonians(spec.theta, cfg, spec.v, reduced=reduced)
    d = hs.shape[-1]
    u, _ = _rk4(np.eye(d, dtype=complex), lambda y, h: -1j * (h @ y), hs,
                cfg.tau_s / cfg.n_steps)
    drift = np.linalg.norm(u.conj().T @ u - np.eye(d))
    if drift > 1e-6:
        raise NonConvergenceError(f"unitarity drift {drift:.2e}: reduce the step size")
    return u


def logical_block(u: np.ndarray) -> np.ndarray:
    """4x4 block of ``u`` on ``(|00>, |01>, |10>, |11>)`` (no unitarisation)."""
    idx = np.array(LOGICAL_INDICES if u.shape[-1] == DIM else REDUCED_LOGICAL_INDICES)
    return u[..., idx[:, None], idx[None, :]]
