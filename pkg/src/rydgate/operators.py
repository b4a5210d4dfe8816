"""Hamiltonians, dissipators, projectors and states for two Rydberg-coupled atoms.

Every atom carries four levels ordered ``(|R>, |1>, |0>, |s>)``; the two-atom
index is ``4 * level_atom1 + level_atom2``. Logical 4x4 gates use the ordering
``(|00>, |01>, |10>, |11>)`` with atom 1 as control, which lands on the global
indices ``(10, 9, 6, 5)``.

Hamiltonians are returned as ``H / hbar`` in rad/s. Decay rates in
:class:`PhysicalConfig` are quoted per microsecond and converted to 1/s when
operators are built.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Literal

import numpy as np

TWO_PI = 2.0 * math.pi

LEVELS = ("R", "1", "0", "s")
R, ONE, ZERO, S = range(4)
DIM = 16
LOGICAL_INDICES = (10, 9, 6, 5)
BASIS_NAME = "two-atom (R,1,0,s)x(R,1,0,s), index = 4*atom1 + atom2"

# The |s> level never couples back, so the dynamics that matter for the
# computational block live on (R,1,0) x (R,1,0).
REDUCED_DIM = 9
REDUCED_LOGICAL_INDICES = (8, 7, 5, 4)

VdwConvention = Literal["angular_frequency", "ordinary_frequency"]


@dataclass(frozen=True)
class PhysicalConfig:
    """Physical constants, control bounds and discretisation of one gate.

    Attributes
    ----------
    c6 : float
        Van-der-Waals coefficient in THz um^6.
    vdw_convention : {"angular_frequency", "ordinary_frequency"}
        Whether ``V/hbar = 2 pi C6 / r^6`` or ``C6 / r^6`` (C6 in THz um^6).
    r : float
        Interatomic distance in um. ``math.inf`` switches the interaction off.
    tau : float
        Algorithm time in us.
    omega_max, a_max : float
        Maximal Rabi and Raman angular frequencies in rad/s.
    dphi_min, dphi_max : float
        Bounds on the Rabi phase slope in rad/s.
    b_min, b_max : float
        Bounds on the Zeeman splitting ``mu B / h`` in Hz.
    gamma : float
        Total Rydberg decay rate in 1/us.
    branching : float
        Ratio of decay into ``|s>`` over decay into ``|1>``.
    m : int
        Samples per pulse.
    n_steps : int
        Fixed RK4 steps over ``[0, tau]``.
    """

    c6: float = 1.0
    vdw_convention: VdwConvention = "angular_frequency"
    r: float = 10.0
    tau: float = 1.0
    omega_max: float = TWO_PI * 1e7
    a_max: float = TWO_PI * 1e7
    dphi_min: float = -math.pi / 100e-9
    dphi_max: float = math.pi / 100e-9
    b_min: float = 1e5
    b_max: float = 2e5
    gamma: float = 0.0
    branching: float = 20.0
    m: int = 64
    n_steps: int = 8192

    def __post_init__(self):
        if self.vdw_convention not in ("angular_frequency", "ordinary_frequency"):
            raise ValueError(f"unknown vdw_convention {self.vdw_convention!r}")
        if not (self.omega_max > 0 and self.a_max > 0 and self.tau > 0):
            raise ValueError("omega_max, a_max and tau must be positive")
        if self.m < 2 or self.n_steps < self.m:
            raise ValueError("need m >= 2 and n_steps >= m")
        if self.gamma < 0 or self.branching <= 0:
            raise ValueError("need gamma >= 0 and branching > 0")
        if self.b_min > self.b_max:
            raise ValueError("b_min must not exceed b_max")
        if not self.dphi_min <= 0 <= self.dphi_max:
            raise ValueError("phase-slope band must contain 0")
        if not self.r > 0:
            raise ValueError("r must be positive")

    @property
    def tau_s(self) -> float:
        return self.tau * 1e-6

    @property
    def gamma_1(self) -> float:
        """Decay rate into ``|1>`` in 1/us."""
        return self.gamma / (1.0 + self.branching)

    @property
    def gamma_s(self) -> float:
        """Decay rate into ``|s>`` in 1/us."""
        return self.gamma - self.gamma_1

    @property
    def v_over_hbar(self) -> float:
        return vdw_strength(self.r, self)

    @property
    def gate_action(self) -> float:
        """Dimensionless ``tau V / hbar``."""
        return self.tau_s * self.v_over_hbar

    def with_gate_action(self, phi: float) -> "PhysicalConfig":
        """Copy with ``r`` chosen so that ``tau V / hbar == phi``."""
        return replace(self, r=distance_for_gate_action(phi, self))

    def replace(self, **changes) -> "PhysicalConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


def _c6_rad_per_s(cfg: PhysicalConfig) -> float:
    scale = TWO_PI if cfg.vdw_convention == "angular_frequency" else 1.0
    return scale * 1e12 * cfg.c6


def vdw_strength(r, cfg: PhysicalConfig):
    """Interaction ``V / hbar`` in rad/s at distance ``r`` (um).

    Accepts scalars or arrays; ``r = inf`` gives zero.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(~(r_arr > 0)):
        raise ValueError("interatomic distance must be positive")
    v = _c6_rad_per_s(cfg) / r_arr**6
    return float(v) if v.ndim == 0 else v


def distance_for_gate_action(phi: float, cfg: PhysicalConfig) -> float:
    """Distance (um) at which ``tau V / hbar`` equals ``phi``."""
    if phi < 0:
        raise ValueError("gate action must be non-negative")
    if phi == 0:
        return math.inf
    return (_c6_rad_per_s(cfg) * cfg.tau_s / phi) ** (1.0 / 6.0)


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input")


def build_local_hamiltonian(omega: complex, a: float, zeeman: float,
                            cfg: PhysicalConfig) -> np.ndarray:
    """Single-atom ``H_j / hbar`` (4x4, rad/s) on ``(|R>, |1>, |0>, |s>)``."""
    _check_finite(omega, a, zeeman)
    tol = 1 + 1e-12
    if abs(omega) > cfg.omega_max * tol:
        raise ValueError("|omega| exceeds omega_max")
    if not 0 <= a <= cfg.a_max * tol:
        raise ValueError("Raman amplitude outside [0, a_max]")
    h = np.zeros((4, 4), dtype=complex)
    h[R, ONE] = omega / 2
    h[ONE, R] = np.conj(omega) / 2
    h[ONE, ZERO] = h[ZERO, ONE] = a / 2
    h[ONE, ONE] = math.pi * zeeman
    h[ZERO, ZERO] = -math.pi * zeeman
    return h


def _local_terms(nlev: int):
    """Unit single-atom operators ``(zeeman, re_omega, im_omega, raman)``."""
    z = np.zeros((nlev, nlev), dtype=complex)
    hz, hx, hy, ha = z.copy(), z.copy(), z.copy(), z.copy()
    hz[ONE, ONE], hz[ZERO, ZERO] = math.pi, -math.pi
    hx[R, ONE] = hx[ONE, R] = 0.5
    hy[R, ONE], hy[ONE, R] = 0.5j, -0.5j
    ha[ONE, ZERO] = ha[ZERO, ONE] = 0.5
    return hz, hx, hy, ha


def control_operators(reduced: bool = False) -> dict[str, np.ndarray]:
    """Operators whose weighted sum gives the two-atom Hamiltonian.

    ``H/hbar = zeeman*hz + Re(omega)*hx + Im(omega)*hy + a1*ha1 + a2*ha2
    + (V/hbar)*nrr``. ``reduced=True`` drops the ``|s>`` level (9-dim).
    """
    nlev = 3 if reduced else 4
    eye = np.eye(nlev)
    hz, hx, hy, ha = _local_terms(nlev)
    both = lambda op: np.kron(op, eye) + np.kron(eye, op)  # noqa: E731
    nrr = np.zeros((nlev * nlev,) * 2, dtype=complex)
    nrr[0, 0] = 1.0
    n_r = np.zeros((nlev, nlev))
    n_r[R, R] = 1.0
    return {
        "hz": both(hz),
        "hx": both(hx),
        "hy": both(hy),
        "ha1": np.kron(ha, eye),
        "ha2": np.kron(eye, ha),
        "nrr": nrr,
        "n_r": both(n_r).real,
    }


def build_total_hamiltonian(omega: complex, a1: float, a2: float, zeeman: float,
                            v_over_hbar: float) -> np.ndarray:
    """Two-atom ``H / hbar`` (16x16, rad/s) with global Rabi drive."""
    _check_finite(omega, a1, a2, zeeman, v_over_hbar)
    ops = control_operators()
    return (zeeman * ops["hz"] + omega.real * ops["hx"] + np.imag(omega) * ops["hy"]
            + a1 * ops["ha1"] + a2 * ops["ha2"] + v_over_hbar * ops["nrr"])


def build_lindblad_ops(cfg: PhysicalConfig) -> list[np.ndarray]:
    """Jump operators ``[L_1^s, L_1^1, L_2^s, L_2^1]`` in sqrt(1/s)."""
    eye = np.eye(4)
    ops = []
    for atom in (0, 1):
        for level, rate in ((S, cfg.gamma_s), (ONE, cfg.gamma_1)):
            local = np.zeros((4, 4), dtype=complex)
            local[level, R] = math.sqrt(rate * 1e6)
            ops.append(np.kron(local, eye) if atom == 0 else np.kron(eye, local))
    return ops


def computational_projector() -> np.ndarray:
    p = np.zeros((DIM, DIM))
    p[LOGICAL_INDICES, LOGICAL_INDICES] = 1.0
    return p


CNOT4 = np.array([[1, 0, 0, 0],
                  [0, 1, 0, 0],
                  [0, 0, 0, 1],
                  [0, 0, 1, 0]], dtype=complex)


def embed_logical(block: np.ndarray) -> np.ndarray:
    """Embed a 4x4 logical gate in the 16-dim space, identity elsewhere."""
    u = np.eye(DIM, dtype=complex)
    idx = np.array(LOGICAL_INDICES)
    u[np.ix_(idx, idx)] = block
    return u


def target_cnot() -> tuple[np.ndarray, np.ndarray]:
    """CNOT with atom 1 as control, as ``(16x16 embedding, 4x4 block)``."""
    return embed_logical(CNOT4), CNOT4.copy()


def random_qubit_states(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` Haar-random logical product states as (n, 4) vectors.

    Each atom gets an independent uniformly distributed Bloch vector; the
    amplitudes are ordered ``(|0>, |1>)`` per qubit and kron'ed into the
    logical ordering.
    """
    g = rng.standard_normal((n, 2, 2, 2))
    q = g[..., 0] + 1j * g[..., 1]
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return np.einsum("na,nb->nab", q[:, 0], q[:, 1]).reshape(n, 4)


def logical_to_density(psi: np.ndarray) -> np.ndarray:
    """Embed a logical 4-vector as a 16x16 pure density matrix."""
    vec = np.zeros(DIM, dtype=complex)
    vec[list(LOGICAL_INDICES)] = psi
    return np.outer(vec, vec.conj())


def random_product_state(rng: np.random.Generator) -> np.ndarray:
    """Random product density matrix on the computational subspace (16x16)."""
    return logical_to_density(random_qubit_states(rng, 1)[0])


def bloch_vector(psi2: np.ndarray) -> np.ndarray:
    """Bloch vector of a normalised qubit amplitude pair ``(c0, c1)``."""
    c0, c1 = psi2
    return np.array([2 * (np.conj(c0) * c1).real, 2 * (np.conj(c0) * c1).imag,
                     abs(c0) ** 2 - abs(c1) ** 2])


def matrix_to_json(mat: np.ndarray, basis: str = BASIS_NAME) -> str:
    """Serialise a complex matrix as row-major ``[re, im]`` pairs."""
    mat = np.asarray(mat, dtype=complex)
    data = [[[float(z.real), float(z.imag)] for z in row] for row in mat]
    return json.dumps({"basis": basis, "shape": list(mat.shape), "data": data})


def matrix_from_json(text: str) -> np.ndarray:
    obj = json.loads(text)
    arr = np.array(obj["data"], dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]
