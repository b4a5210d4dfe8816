"""Exact algebraic checks of global-pulse universality on three-level atoms.

Each atom has levels ``(|R>, |1>, |0>)``. Local generators act on one atom
and are embedded in the ``3**n`` dimensional space by tensor products with
identities; atoms are numbered from 1 in generator ids (``"tau_x^2"``).

Printed constructions are composed exactly (Hermitian eigendecomposition)
and compared up to a global phase. Where a construction does not close as
written, a fixed set of convention variants is tried and every closing
variant is reported; the printed form is never replaced silently.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from functools import reduce

import numpy as np

PI = np.pi
TOL_COMMUTATOR = 1e-13
TOL_FIDELITY = 1e-9


def _unit(a: int, b: int) -> np.ndarray:
    m = np.zeros((3, 3), dtype=complex)
    m[a, b] = 1.0
    return m


R_, ONE_, ZERO_ = 0, 1, 2

LOCAL = {
    "sigma_x": _unit(1, 2) + _unit(2, 1),
    "sigma_y": -1j * _unit(1, 2) + 1j * _unit(2, 1),
    "sigma_z": _unit(1, 1) - _unit(2, 2),
    "tau_x": _unit(0, 1) + _unit(1, 0),
    "tau_y": -1j * _unit(0, 1) + 1j * _unit(1, 0),
    "tau_z": _unit(0, 0) - _unit(1, 1),
    "nu_x": _unit(0, 2) + _unit(2, 0),
    "nu_y": -1j * _unit(0, 2) + 1j * _unit(2, 0),
}
GLOBAL = {"S_x": "sigma_x", "S_z": "sigma_z", "T_x": "tau_x", "T_y": "tau_y"}


def expi(alpha: float, g: np.ndarray) -> np.ndarray:
    """``exp(i alpha G)`` for Hermitian ``G`` via eigendecomposition."""
    w, v = np.linalg.eigh(g)
    return (v * np.exp(1j * alpha * w)) @ v.conj().T


@dataclass
class GeneratorSet:
    """Local and global generators for ``n`` three-level atoms."""

    n: int
    local: dict = field(default_factory=dict)
    global_: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return 3**self.n

    def embed(self, op: np.ndarray, atom: int) -> np.ndarray:
        """Embed a 3x3 operator on ``atom`` (1-based)."""
        factors = [np.eye(3)] * self.n
        factors[atom - 1] = op
        return reduce(np.kron, factors)

    def v_pair(self, pair=(1, 2)) -> np.ndarray:
        """``|RR><RR|`` on the given atom pair."""
        proj = np.diag([1.0, 0.0, 0.0]).astype(complex)
        factors = [np.eye(3)] * self.n
        for a in pair:
            factors[a - 1] = proj
        return reduce(np.kron, factors)

    def get(self, gid: str) -> np.ndarray:
        """Resolve ids such as ``"T_x"``, ``"tau_x^2"`` or ``"tau_x^2+tau_y^2"``."""
        if "+" in gid:
            return sum(self.get(part.strip()) for part in gid.split("+"))
        if gid in self.global_:
            return self.global_[gid]
        if gid.startswith("V"):
            return self.v_pair()
        try:
            return self.local[gid]
        except KeyError:
            raise KeyError(f"unknown generator id {gid!r}") from None


def build_generators(n: int) -> GeneratorSet:
    if not 1 <= n <= 4:
        raise ValueError("n must be between 1 and 4")
    gs = GeneratorSet(n)
    for name, op in LOCAL.items():
        for j in range(1, n + 1):
            gs.local[f"{name}^{j}"] = gs.embed(op, j)
    for gname, lname in GLOBAL.items():
        gs.global_[gname] = sum(gs.local[f"{lname}^{j}"] for j in range(1, n + 1))
    if n >= 2:
        gs.global_["V"] = gs.v_pair()
    return gs


# --- commutators ------------------------------------------------------------

@dataclass
class CommutatorCheck:
    name: str
    residual: float
    passed: bool


def _comm(a, b):
    return a @ b - b @ a


def check_commutators(n: int = 2, i: int = 1) -> list[CommutatorCheck]:
    """The six commutator identities for atom ``i`` (entrywise residuals)."""
    if n < 2:
        raise ValueError("need n >= 2")
    g = build_generators(n)
    loc = lambda name: g.local[f"{name}^{i}"]  # noqa: E731
    cases = [
        (f"[sigma_x^{i}, T_x] = -i nu_y^{i}", _comm(loc("sigma_x"), g.global_["T_x"]), -1j * loc("nu_y")),
        (f"[nu_y^{i}, sigma_x^{i}] = -i tau_x^{i}", _comm(loc("nu_y"), loc("sigma_x")), -1j * loc("tau_x")),
        (f"[nu_y^{i}, T_y] = -i sigma_y^{i}", _comm(loc("nu_y"), g.global_["T_y"]), -1j * loc("sigma_y")),
        (f"[S_x, tau_x^{i}] = -i nu_y^{i}", _comm(g.global_["S_x"], loc("tau_x")), -1j * loc("nu_y")),
        (f"[nu_y^{i}, tau_x^{i}] = +i sigma_x^{i}", _comm(loc("nu_y"), loc("tau_x")), 1j * loc("sigma_x")),
        (f"[nu_y^{i}, tau_y^{i}] = -i sigma_y^{i}", _comm(loc("nu_y"), loc("tau_y")), -1j * loc("sigma_y")),
    ]
    out = []
    for name, lhs, rhs in cases:
        res = float(np.max(np.abs(lhs - rhs)))
        out.append(CommutatorCheck(name, res, res < TOL_COMMUTATOR))
    return out


# --- single-qubit rotation syntheses -----------------------------------------

# Factors listed left to right as written; "a" marks the free angle alpha.
ROTATIONS = {
    ("rabi", "tau_x"): [("sigma_x^i", 1.5 * PI), ("T_x", 1.5 * PI), ("sigma_x^i", "a"),
                        ("T_x", 0.5 * PI), ("sigma_x^i", 0.5 * PI)],
    ("rabi", "tau_y"): [("sigma_x^i", 1.5 * PI), ("T_y", 1.5 * PI), ("sigma_x^i", "a"),
                        ("T_y", 0.5 * PI), ("sigma_x^i", 0.5 * PI)],
    ("rabi", "sigma_y"): [("sigma_x^i", 1.5 * PI), ("T_y", 1.5 * PI), ("T_x", 1.5 * PI),
                          ("sigma_x^i", "a"), ("T_x", 0.5 * PI), ("T_y", 0.5 * PI),
                          ("sigma_x^i", 0.5 * PI)],
    ("rabi", "sigma_z"): [("sigma_x^i", 1.75 * PI), ("T_y", 1.5 * PI), ("T_x", 1.5 * PI),
                          ("sigma_x^i", "a"), ("T_x", 0.5 * PI), ("T_y", 0.5 * PI),
                          ("sigma_x^i", 0.25 * PI)],
    ("raman", "sigma_x"): [("tau_x^i", 1.5 * PI), ("S_x", 1.5 * PI), ("tau_x^i", "a"),
                           ("S_x", 0.5 * PI), ("tau_x^i", 0.5 * PI)],
    ("raman", "sigma_y"): [("tau_x^i", 1.5 * PI), ("S_x", 1.5 * PI), ("tau_y^i", "a"),
                           ("S_x", 0.5 * PI), ("tau_x^i", 0.5 * PI)],
    ("raman", "sigma_z"): [("tau_x^i", 1.5 * PI), ("S_x", 1.5 * PI), ("tau_y^i", 0.25 * PI),
                           ("tau_x^i", "a"), ("tau_y^i", 1.75 * PI), ("S_x", 0.5 * PI),
                           ("tau_x^i", 0.5 * PI)],
}
ROTATION_VARIANTS = ("printed", "alpha_negated", "transposed", "alpha_negated+transposed")


def _compose(gs: GeneratorSet, factors, transpose=False, project=None) -> np.ndarray:
    u = np.eye(gs.dim, dtype=complex)
    for gid, angle in factors:
        g = gs.get(gid)
        if transpose:
            g = g.T
        if project is not None:
            g = project @ g @ project
        u = u @ expi(angle, g)
    return u


def _phase_free_overlap(a: np.ndarray, b: np.ndarray) -> float:
    return float(abs(np.trace(a.conj().T @ b)) / a.shape[0])


def rotation_fidelity(identity_name: str, alpha: float, i: int = 1, n: int = 2,
                      family: str = "rabi", variant: str = "printed") -> float:
    """``|Tr(LHS^+ RHS)| / 3^n`` for one rotation synthesis."""
    key = (family, identity_name)
    if key not in ROTATIONS:
        raise KeyError(f"unknown identity {family}:{identity_name}")
    if variant not in ROTATION_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    gs = build_generators(n)
    sign = -1.0 if "alpha_negated" in variant else 1.0
    lhs = expi(sign * alpha, gs.get(f"{identity_name}^{i}"))
    factors = [(gid.replace("^i", f"^{i}"), alpha if ang == "a" else ang)
               for gid, ang in ROTATIONS[key]]
    rhs = _compose(gs, factors, transpose="transposed" in variant)
    return _phase_free_overlap(lhs, rhs)


@dataclass
class RotationReport:
    family: str
    identity: str
    alpha: float
    fidelity: float
    passed: bool
    closing_variants: list


def check_rotation(identity_name: str, alpha: float, i: int = 1, n: int = 2,
                   family: str = "rabi") -> RotationReport:
    f = rotation_fidelity(identity_name, alpha, i, n, family)
    closing = [] if f >= 1 - TOL_FIDELITY else [
        v for v in ROTATION_VARIANTS[1:]
        if rotation_fidelity(identity_name, alpha, i, n, family, v) >= 1 - TOL_FIDELITY]
    return RotationReport(family, identity_name, float(alpha), f, f >= 1 - TOL_FIDELITY, closing)


# --- blockade-limit gate sequences -------------------------------------------

def blockade_projector(n: int, pair=(1, 2)) -> np.ndarray:
    """Projector removing states with both atoms of ``pair`` in ``|R>``."""
    gs = build_generators(n)
    return np.eye(gs.dim) - gs.v_pair(pair).real


@dataclass
class GateSequence:
    """Factors ``(generator-id, angle)`` listed left to right as written."""

    factors: list
    mode: str = "blockade_projected"
    v_ratio: float | None = None

    def __post_init__(self):
        if self.mode not in ("free", "blockade_projected", "finite_v"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "finite_v" and not self.v_ratio:
            raise ValueError("finite_v needs v_ratio")
        if not all(np.isfinite(a) for _, a in self.factors):
            raise ValueError("angles must be finite")


_R_FACTORS = [("S_x", PI / 2), ("tau_x^2", PI / 4), ("tau_x^2+tau_y^2", PI / np.sqrt(8)),
              ("tau_x^2", PI / 4), ("S_x", 1.5 * PI)]
CNOT_FACTORS = [("tau_x^2", PI / 2)] + _R_FACTORS + [("tau_x^1", PI)] + _R_FACTORS + [("tau_x^2", PI / 2)]
CY_FACTORS = [("tau_x^2", -PI / 2), ("S_x", -PI / 4), ("tau_x^1", PI), ("S_x", PI / 4),
              ("tau_x^2", PI / 2)]

CNOT_4 = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
CY_4 = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, -1j], [0, 0, 1j, 0]], dtype=complex)

_X2 = np.array([[0, 1], [1, 0]], dtype=complex)
_SWAP = np.eye(4)[[0, 2, 1, 3]]
TARGET_CONVENTIONS = {
    "as_defined": lambda t: t,
    "control_on_0": lambda t: np.kron(_X2, np.eye(2)) @ t @ np.kron(_X2, np.eye(2)),
    "roles_swapped": lambda t: _SWAP @ t @ _SWAP,
    "roles_swapped+control_on_0": lambda t: _SWAP @ np.kron(_X2, np.eye(2)) @ t
    @ np.kron(_X2, np.eye(2)) @ _SWAP,
}
SEQUENCE_VARIANTS = ("printed", "angles_negated", "transposed", "angles_negated+transposed")


def logical_indices(n: int) -> np.ndarray:
    """Indices of ``|q1 ... qn>`` (``q = 0, 1``) with the last atom fastest."""
    level = {0: ZERO_, 1: ONE_}
    out = []
    for bits in itertools.product((0, 1), repeat=n):
        idx = 0
        for b in bits:
            idx = 3 * idx + level[b]
        out.append(idx)
    return np.array(out)


def sequence_unitary(seq: GateSequence, n: int = 2, pair=(1, 2), variant: str = "printed") -> np.ndarray:
    gs = build_generators(n)
    sign = -1.0 if "angles_negated" in variant else 1.0
    transpose = "transposed" in variant
    v = gs.v_pair(pair)
    u = np.eye(gs.dim, dtype=complex)
    proj = blockade_projector(n, pair) if seq.mode == "blockade_projected" else None
    for gid, angle in seq.factors:
        g = gs.get(gid)
        if transpose:
            g = g.T
        a = sign * angle
        if proj is not None:
            g = proj @ g @ proj
        if seq.mode == "finite_v":
            # amplitude |a|/T for a duration T, interaction V T = ratio |a|
            u = u @ expi(1.0, a * g - seq.v_ratio * abs(a) * v)
        else:
            u = u @ expi(a, g)
    return u


@dataclass
class SequenceResult:
    fidelity: float
    leakage: float
    block: np.ndarray = field(repr=False)


def verify_sequence(seq: GateSequence, target: np.ndarray, n: int = 2, pair=(1, 2),
                    variant: str = "printed") -> SequenceResult:
    """``|Tr(B^+ T)| / d`` on the logical block, with spectators as identity."""
    if n < 2:
        raise ValueError("need n >= 2")
    u = sequence_unitary(seq, n, pair, variant)
    idx = logical_indices(n)
    block = u[np.ix_(idx, idx)]
    full_target = np.kron(target, np.eye(2 ** (n - 2)))
    d = len(idx)
    fid = float(abs(np.trace(block.conj().T @ full_target)) / d)
    leakage = float(1.0 - np.trace(block.conj().T @ block).real / d)
    return SequenceResult(fid, leakage, block)


@dataclass
class SequenceReport:
    name: str
    mode: str
    n: int
    fidelity: float
    leakage: float
    passed: bool
    closing_variants: list


def check_sequence(name: str, factors, target, mode="blockade_projected", n=2,
                   v_ratio=None) -> SequenceReport:
    seq = GateSequence(factors, mode, v_ratio)
    res = verify_sequence(seq, target, n)
    ok = res.fidelity >= 1 - TOL_FIDELITY
    closing = []
    if not ok:
        for var in SEQUENCE_VARIANTS:
            for conv, f in TARGET_CONVENTIONS.items():
                if var == "printed" and conv == "as_defined":
                    continue
                if verify_sequence(seq, f(target), n, variant=var).fidelity >= 1 - TOL_FIDELITY:
                    closing.append(f"{var}/{conv}")
    return SequenceReport(name, mode, n, res.fidelity, res.leakage, ok, closing)


def _closing_target(report: SequenceReport, target):
    """Variant and target that close a sequence (printed factors preferred)."""
    if report.passed:
        return "printed", target
    if not report.closing_variants:
        return None, None
    var, conv = report.closing_variants[0].split("/")
    return var, TARGET_CONVENTIONS[conv](target)


def finite_v_errors(factors, target, ratios=(10.0, 1e2, 1e3), variant="printed") -> list:
    """Gate error ``1 - F`` of the finite-interaction sequence for each ``V/Omega``."""
    return [1.0 - verify_sequence(GateSequence(factors, "finite_v", r), target,
                                  variant=variant).fidelity for r in ratios]


def spectator_check(factors, target, variant="printed") -> dict:
    """Three atoms: the third only sees the global ``S_x`` factors."""
    res = verify_sequence(GateSequence(factors, "blockade_projected"), target, n=3, variant=variant)
    b = res.block
    # spectator structure: block should be target (x) phase-diag on the third qubit
    sub = [b[q::2, q::2] for q in (0, 1)]
    phases = [complex(np.trace(target.conj().T @ s) / 4) for s in sub]
    return {"fidelity": res.fidelity, "leakage": res.leakage,
            "spectator_phases": [[p.real, p.imag] for p in phases],
            "passed": res.fidelity >= 1 - TOL_FIDELITY}


def universality_report(alphas=(0.0, PI / 3, PI / 2, PI), ratios=(10.0, 1e2, 1e3)) -> dict:
    """Everything the verifier checks, as a JSON-ready dictionary."""
    comm = [asdict(c) for i in (1, 2) for c in check_commutators(2, i)]
    rots = [asdict(check_rotation(name, a, 1, 2, fam))
            for (fam, name) in ROTATIONS for a in alphas]
    seqs = []
    finite = []
    spect = None
    for name, factors, target in (("CNOT", CNOT_FACTORS, CNOT_4), ("C(Y)", CY_FACTORS, CY_4)):
        for mode in ("free", "blockade_projected"):
            rep = check_sequence(name, factors, target, mode)
            seqs.append(asdict(rep))
            if mode != "blockade_projected":
                continue
            var, tgt = _closing_target(rep, target)
            if tgt is None:
                continue
            errs = finite_v_errors(factors, tgt, ratios, var)
            finite.append({"name": name, "variant": var, "v_over_omega": list(ratios),
                           "error": errs,
                           "monotone": bool(all(b < a for a, b in zip(errs, errs[1:])))})
            if name == "CNOT":
                spect = {"name": name, "variant": var, **spectator_check(factors, tgt, var)}
    rot_ok = all(r["passed"] or r["closing_variants"] for r in rots)
    seq_ok = all(s["passed"] or s["closing_variants"]
                 for s in seqs if s["mode"] == "blockade_projected")
    all_ok = (all(c["passed"] for c in comm) and rot_ok and seq_ok
              and all(f["monotone"] for f in finite) and bool(spect and spect["passed"]))
    return {"commutators": comm, "rotations": rots, "sequences": seqs,
            "finite_v": finite, "spectator": spect, "passed": all_ok}


def report_json(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True)
