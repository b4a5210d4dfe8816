"""Batch fidelity loss, forward-difference gradients and ADAM training."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np

from .engine import make_loss
from .operators import (
    CNOT4,
    LOGICAL_INDICES,
    PhysicalConfig,
    computational_projector,
    embed_logical,
    random_qubit_states,
)
from .protocol import ProtocolParams, apply_constraints, init_protocol

LossMode = Literal["normalized", "literal"]

# stream tags for derived seeds
INIT_STREAM = 0
BATCH_STREAM = 1
VALID_STREAM = 2
VALIDATION_SIZE = 256


class TrainingError(RuntimeError):
    """Raised when the loss or its gradient stops being finite."""


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


@dataclass(frozen=True)
class AdamConfig:
    """ADAM hyper-parameters.

    With ``lr_final`` set, the step size decays geometrically from ``lr`` at
    the first epoch to ``lr_final`` at the last one.
    """

    lr: float = 6e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_final: float | None = None

    def lr_at(self, epoch: int, epochs: int) -> float:
        if self.lr_final is None or epochs < 2:
            return self.lr
        return self.lr * (self.lr_final / self.lr) ** (epoch / (epochs - 1))


@dataclass(frozen=True)
class TrainingConfig:
    """Hyper-parameters of one optimisation run.

    ``fd_epsilon`` is measured in normalised parameter units, where every
    parameter's admissible band has width 1.
    """

    epochs: int = 500
    batch_size: int = 32
    fd_epsilon: float = 1e-8
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    resample_each_epoch: bool = True
    loss_mode: LossMode = "normalized"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.fd_epsilon > 0:
            raise ValueError("fd_epsilon must be positive")
        if self.loss_mode not in ("normalized", "literal"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingRecord:
    losses: np.ndarray
    wall_ms: np.ndarray
    theta: ProtocolParams
    validation_fidelity: float
    seed: int
    wall_time: float
    config: dict

    @property
    def final_infidelity(self) -> float:
        return 1.0 - self.validation_fidelity


# --- fidelity and loss ------------------------------------------------------

def fidelity(rho_final: np.ndarray, rho0: np.ndarray, target_u: np.ndarray,
             mode: LossMode = "normalized") -> float:
    """Overlap of a final state with the ideal image of ``rho0``.

    Parameters
    ----------
    rho_final, rho0 : ndarray
        16x16 density matrices.
    target_u : ndarray
        16x16 target unitary (see :func:`rydgate.operators.embed_logical`).
    mode : {"normalized", "literal"}
        ``normalized`` is ``Tr(P U rho0 U^+ P . P rho P)``, equal to 1 for a
        perfect gate on a pure logical input. ``literal`` keeps the extra
        prefactor 1/4 and an absolute value.
    """
    p = computational_projector()
    ideal = p @ target_u @ rho0 @ target_u.conj().T @ p
    if mode == "literal":
        return 0.25 * abs(np.trace(rho_final.conj().T @ ideal))
    return float(np.trace(ideal @ p @ rho_final @ p).real)


def loss(theta: ProtocolParams, batch: np.ndarray, cfg: PhysicalConfig,
         target: np.ndarray = CNOT4, loss_mode: LossMode = "normalized", v=None) -> float:
    """``1 - mean fidelity`` over a batch of logical input states ``(b, 4)``."""
    return make_loss(cfg, batch, target, v, loss_mode).loss(theta)


def fd_gradient(theta: ProtocolParams, batch: np.ndarray, cfg: PhysicalConfig,
                eps: float = 1e-8, target: np.ndarray = CNOT4,
                loss_mode: LossMode = "normalized", v=None):
    """Forward-difference gradient in normalised coordinates.

    Returns ``(L(theta), grad)``; ``grad[i] = (L(u + eps e_i) - L(u)) / eps``
    with ``u = theta.to_vector(cfg)`` and no clamping of the perturbed point.
    """
    engine = make_loss(cfg, batch, target, v, loss_mode)
    return engine.loss_and_gradient(theta.to_vector(cfg), eps)


def forward_difference(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float):
    """Plain forward differences of a scalar function (reference path)."""
    x = np.asarray(x, dtype=float)
    f0 = f(x)
    grad = np.empty_like(x)
    for i in range(len(x)):
        xp = x.copy()
        xp[i] += eps
        grad[i] = (f(xp) - f0) / eps
    return f0, grad


# --- ADAM -------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def clip_unit(u: np.ndarray) -> np.ndarray:
    return np.clip(u, 0.0, 1.0)


def adam_step(x: np.ndarray, grad: np.ndarray, state: AdamState, cfg: AdamConfig = AdamConfig(),
              project: Callable[[np.ndarray], np.ndarray] = clip_unit, lr: float | None = None):
    """One ADAM descent step followed by the constraint projection.

    Returns the new point and the new state; inputs are not modified.
    ``lr`` overrides ``cfg.lr`` (used by learning-rate schedules).
    """
    lr = cfg.lr if lr is None else lr
    if x.shape != grad.shape or x.shape != state.m.shape:
        raise ValueError("shape mismatch between parameters, gradient and state")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grad**2
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    x_new = project(x - lr * m_hat / (np.sqrt(v_hat) + cfg.eps))
    return x_new, AdamState(m, v, t)


# --- training loop ----------------------------------------------------------

def train(cfg: TrainingConfig, physical_cfg: PhysicalConfig, target: np.ndarray = CNOT4,
          theta0: ProtocolParams | None = None, v=None,
          callback: Callable[[int, float], None] | None = None) -> TrainingRecord:
    """Optimise a protocol from a random start.

    Every random draw derives from ``cfg.seed``: the initial protocol, the
    batch of each epoch (indexed by epoch) and the validation batch, so a
    run is reproducible and independent of anything else in the process.
    """
    start = time.perf_counter()
    if theta0 is None:
        theta0 = init_protocol(derive_rng(cfg.seed, INIT_STREAM), physical_cfg)
    u = theta0.to_vector(physical_cfg)
    batch = random_qubit_states(derive_rng(cfg.seed, BATCH_STREAM, 0), cfg.batch_size)
    engine = make_loss(physical_cfg, batch, target, v, cfg.loss_mode)
    state = AdamState.zeros(len(u))
    losses = np.empty(cfg.epochs)
    wall = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        if cfg.resample_each_epoch and epoch > 0:
            engine.set_states(random_qubit_states(derive_rng(cfg.seed, BATCH_STREAM, epoch),
                                                  cfg.batch_size))
        value, grad = engine.loss_and_gradient(u, cfg.fd_epsilon)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise TrainingError(f"non-finite loss or gradient at epoch {epoch}")
        u, state = adam_step(u, grad, state, cfg.adam, lr=cfg.adam.lr_at(epoch, cfg.epochs))
        losses[epoch] = value
        wall[epoch] = 1e3 * (time.perf_counter() - t0)
        if callback is not None:
            callback(epoch, value)
    theta = apply_constraints(ProtocolParams.from_vector(u, physical_cfg), physical_cfg)
    valid = random_qubit_states(derive_rng(cfg.seed, VALID_STREAM), VALIDATION_SIZE)
    engine.set_states(valid)
    f_val = 1.0 - engine.loss(theta)
    return TrainingRecord(
        losses=losses,
        wall_ms=wall,
        theta=theta,
        validation_fidelity=float(f_val),
        seed=cfg.seed,
        wall_time=time.perf_counter() - start,
        config={"training": cfg.to_dict(), "physical": physical_cfg.to_dict()},
    )


def per_state_fidelities(u16: np.ndarray, states: np.ndarray, target: np.ndarray = CNOT4) -> np.ndarray:
    """Reference fidelities from a full 16x16 propagator, one state at a time."""
    idx = list(LOGICAL_INDICES)
    big_target = embed_logical(target)
    out = []
    for psi in states:
        vec = np.zeros(16, dtype=complex)
        vec[idx] = psi
        rho0 = np.outer(vec, vec.conj())
        out.append(fidelity(u16 @ rho0 @ u16.conj().T, rho0, big_target))
    return np.array(out)
