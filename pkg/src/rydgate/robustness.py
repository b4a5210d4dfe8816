"""Gate error under stochastic fluctuations of the interatomic distance.

The distance ``r + dr(t)`` is piecewise constant on a 512 MHz grid with
i.i.d. normal samples ``dr ~ N(0, sigma_r)``. A trained protocol is
propagated with the resulting ``V(t)`` and compared with CNOT through the
phase-insensitive trace metric ``1 - |Tr(B^+ CNOT)| / 4``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import stable_n_steps
from .engine import LOG, UnitaryLoss
from .operators import CNOT4, PhysicalConfig, random_qubit_states, vdw_strength
from .protocol import ProtocolParams

SAMPLE_RATE_HZ = 512e6
COLLISION_GUARD_UM = 0.5
UNITARITY_TOL = 1e-6
_STEP_QUANTUM = 8  # step counts rounded to multiples of 8 per noise segment


@dataclass(frozen=True, eq=False)
class NoiseTrajectory:
    sigma_r: float
    samples: np.ndarray
    seed: tuple | None = None


@dataclass(frozen=True)
class RobustnessResult:
    r: float
    sigma_r: float
    epsilon: float
    stderr: float
    n_trajectories: int
    n_protocols: int
    n_excluded: int = 0

    @property
    def n_samples(self) -> int:
        return self.n_trajectories * self.n_protocols - self.n_excluded


def n_noise_samples(cfg: PhysicalConfig) -> int:
    return int(round(SAMPLE_RATE_HZ * cfg.tau_s))


def sample_trajectory(sigma_r: float, rng: np.random.Generator,
                      cfg: PhysicalConfig | None = None, seed=None) -> NoiseTrajectory:
    """I.i.d. ``N(0, sigma_r)`` distance offsets (um), one per 1/512 us."""
    if sigma_r < 0:
        raise ValueError("sigma_r must be >= 0")
    n = n_noise_samples(cfg or PhysicalConfig())
    samples = sigma_r * rng.standard_normal(n)
    return NoiseTrajectory(float(sigma_r), samples, seed)


def v_of_t(r: float, trajectory: NoiseTrajectory, cfg: PhysicalConfig) -> np.ndarray:
    """Interaction per noise segment (rad/s)."""
    dist = r + trajectory.samples
    if np.any(dist <= COLLISION_GUARD_UM):
        raise ValueError(f"distance fell below {COLLISION_GUARD_UM} um")
    return vdw_strength(dist, cfg)


def trace_error(block: np.ndarray, target: np.ndarray = CNOT4) -> float:
    """``1 - |Tr(B^+ T)| / 4``."""
    return float(1.0 - abs(np.trace(block.conj().T @ target)) / 4.0)


def _n_steps(cfg: PhysicalConfig, v_max: float) -> int:
    """``cfg.n_steps``, or a quantised larger count when ``v_max`` needs it."""
    n_noise = n_noise_samples(cfg)
    n = stable_n_steps(cfg, v_max, multiple=n_noise)
    if n > cfg.n_steps:
        q = _STEP_QUANTUM * n_noise
        n = -(-n // q) * q
    return n


def _seed_key(r: float, sigma_r: float) -> list[int]:
    return [int(round(1000 * r)), int(round(1000 * sigma_r))]


def transformation_error(protocols, r: float, sigma_r: float, n_traj: int = 50,
                         seed: int = 0, cfg: PhysicalConfig | None = None,
                         target: np.ndarray = CNOT4) -> RobustnessResult:
    """Mean trace error over protocols and noise trajectories.

    Trajectory ``k`` of protocol ``p`` is drawn from the stream
    ``(seed, r, sigma_r, p, k)``. The step count is raised above
    ``cfg.n_steps`` when the trajectory's strongest interaction needs it;
    samples whose propagator still drifts from unitarity by more than
    ``1e-6`` are excluded and counted.
    """
    cfg = (cfg or PhysicalConfig()).replace(r=r, gamma=0.0)
    n_noise = n_noise_samples(cfg)
    if cfg.n_steps % n_noise:
        raise ValueError("n_steps must be a multiple of the noise sample count")
    protocols = list(protocols)
    dummy = random_qubit_states(np.random.default_rng(0), 1)
    engines = {}
    errors = []
    excluded = 0
    for p, theta in enumerate(protocols):
        for k in range(n_traj):
            key = (int(seed), *_seed_key(r, sigma_r), p, k)
            rng = np.random.default_rng(np.random.SeedSequence(list(key)))
            traj = sample_trajectory(sigma_r, rng, cfg, seed=key)
            v = v_of_t(r, traj, cfg)
            n = _n_steps(cfg, float(v.max()))
            if n not in engines:
                engines[n] = UnitaryLoss(cfg.replace(n_steps=n), dummy, target)
            u = engines[n].propagator(theta, v=v)
            if np.linalg.norm(u.conj().T @ u - np.eye(len(u))) > UNITARITY_TOL:
                excluded += 1
                continue
            errors.append(trace_error(u[LOG[:, None], LOG[None, :]], target))
    errors = np.array(errors)
    if len(errors) == 0:
        eps, err = float("nan"), float("nan")
    else:
        eps = float(errors.mean())
        err = float(errors.std(ddof=1) / np.sqrt(len(errors))) if len(errors) > 1 else 0.0
    return RobustnessResult(float(r), float(sigma_r), eps, err, n_traj, len(protocols), excluded)


def deterministic_error(theta: ProtocolParams, cfg: PhysicalConfig,
                        target: np.ndarray = CNOT4) -> float:
    """Trace error of the noiseless propagator."""
    dummy = random_qubit_states(np.random.default_rng(0), 1)
    cfg = cfg.replace(gamma=0.0)
    cfg = cfg.replace(n_steps=_n_steps(cfg, cfg.v_over_hbar))
    u = UnitaryLoss(cfg, dummy, target).propagator(theta)
    return trace_error(u[LOG[:, None], LOG[None, :]], target)
