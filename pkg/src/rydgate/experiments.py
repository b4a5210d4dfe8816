"""Training sweeps and robustness grids built from the core modules."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .dynamics import stable_n_steps
from .operators import PhysicalConfig
from .optimizer import TrainingConfig, TrainingRecord, train
from .robustness import RobustnessResult, transformation_error

COMMAND_IDS = {"optimize": 0, "sweep-phi": 1, "sweep-omega": 2, "robustness": 3}


def point_seed(master: int, command: str, *index: int) -> int:
    """Seed of one grid point / restart, independent of execution order."""
    seq = np.random.SeedSequence([int(master), COMMAND_IDS[command], *map(int, index)])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def _train_job(args) -> TrainingRecord:
    tcfg, cfg = args
    return train(tcfg, cfg)


def run_jobs(jobs, workers: int = 1) -> list[TrainingRecord]:
    """Run ``(TrainingConfig, PhysicalConfig)`` jobs; results keep job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [_train_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_job, jobs))


@dataclass
class SweepRow:
    key: float
    mean_infidelity: float
    stderr: float
    infidelities: list


def _summarise(key, records) -> SweepRow:
    inf = np.array([rec.final_infidelity for rec in records])
    err = float(inf.std(ddof=1) / np.sqrt(len(inf))) if len(inf) > 1 else 0.0
    return SweepRow(float(key), float(inf.mean()), err, inf.tolist())


def sweep(command: str, keys, make_cfg, tcfg: TrainingConfig, n_restarts: int,
          master_seed: int, workers: int = 1):
    """Train ``n_restarts`` protocols at every grid key.

    ``make_cfg(key)`` returns the physical configuration of a grid point.
    Returns the summary rows (sorted by key) and the records per key.
    """
    keys = sorted(float(k) for k in keys)
    jobs = []
    for gi, key in enumerate(keys):
        for ri in range(n_restarts):
            jobs.append((replace(tcfg, seed=point_seed(master_seed, command, gi, ri)),
                         make_cfg(key)))
    records = run_jobs(jobs, workers)
    rows, per_key = [], {}
    for gi, key in enumerate(keys):
        recs = records[gi * n_restarts:(gi + 1) * n_restarts]
        per_key[key] = recs
        rows.append(_summarise(key, recs))
    return rows, per_key


def sweep_phi(phis, cfg: PhysicalConfig, tcfg: TrainingConfig, n_restarts: int = 15,
              master_seed: int = 0, workers: int = 1):
    return sweep("sweep-phi", phis, cfg.with_gate_action, tcfg, n_restarts, master_seed, workers)


def sweep_omega(omegas, cfg: PhysicalConfig, tcfg: TrainingConfig, n_restarts: int = 3,
                master_seed: int = 0, workers: int = 1):
    return sweep("sweep-omega", omegas, lambda om: cfg.replace(omega_max=om), tcfg,
                 n_restarts, master_seed, workers)


def fit_critical(phis, infidelities) -> dict:
    """Least-squares fit of ``A (phi - phi_c)^2`` below the critical action.

    Above ``phi_c`` the model is zero (the converged plateau), so points on
    both sides can be used. For fixed ``phi_c`` the best ``A >= 0`` is a
    closed-form projection; ``phi_c`` is then found by a bounded scalar
    search.
    """
    phis = np.asarray(phis, dtype=float)
    y = np.asarray(infidelities, dtype=float)
    if len(phis) < 2 or not np.all(np.isfinite(y)):
        return {"success": False, "message": "need at least two finite points"}

    def best_a(pc):
        x = np.maximum(pc - phis, 0.0) ** 2
        denom = float(x @ x)
        return max(float(x @ y) / denom, 0.0) if denom > 0 else 0.0

    def sse(pc):
        x = np.maximum(pc - phis, 0.0) ** 2
        return float(np.sum((best_a(pc) * x - y) ** 2))

    lo, hi = float(phis.min()), float(phis.max()) + np.pi
    grid = np.linspace(lo, hi, 401)
    start = grid[int(np.argmin([sse(g) for g in grid]))]
    step = grid[1] - grid[0]
    res = minimize_scalar(sse, bounds=(max(lo, start - step), min(hi, start + step)),
                          method="bounded", options={"xatol": 1e-10})
    pc = float(res.x)
    return {"success": bool(res.success), "A": best_a(pc), "phi_c": pc,
            "phi_c_over_pi": pc / np.pi, "sse": float(res.fun), "n_points": int(len(phis)),
            "message": "ok" if res.success else str(res.message)}


def plateaus(phis, infidelities) -> dict:
    """Mean infidelity on ``2 pi < phi < 3 pi`` and ``phi > 3 pi``."""
    phis = np.asarray(phis, dtype=float)
    y = np.asarray(infidelities, dtype=float)
    out = {}
    for name, mask in (("2pi_3pi", (phis > 2 * np.pi) & (phis < 3 * np.pi)),
                       ("above_3pi", phis > 3 * np.pi)):
        out[name] = float(y[mask].mean()) if mask.any() else None
    return out


def train_protocols_per_r(radii, cfg: PhysicalConfig, tcfg: TrainingConfig, n_protocols: int,
                          master_seed: int = 0, workers: int = 1):
    """Protocols trained at each distance (gamma = 0), keyed by ``r``.

    The step count is raised where the interaction is strong enough to
    spoil RK4 unitarity at ``cfg.n_steps``.
    """
    def make_cfg(r):
        c = cfg.replace(r=r, gamma=0.0)
        return c.replace(n_steps=stable_n_steps(c))

    _, per_key = sweep("robustness", radii, make_cfg, tcfg, n_protocols, master_seed, workers)
    return {r: [rec.theta for rec in recs] for r, recs in per_key.items()}


def robustness_grid(protocols_by_r: dict, sigmas, cfg: PhysicalConfig, n_traj: int = 50,
                    master_seed: int = 0) -> list[RobustnessResult]:
    rows = []
    for r in sorted(protocols_by_r):
        for s in sorted(float(x) for x in sigmas):
            rows.append(transformation_error(protocols_by_r[r], r, s, n_traj, master_seed, cfg))
    return rows
