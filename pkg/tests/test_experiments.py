import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydgate.experiments import fit_critical, plateaus, point_seed, sweep_phi
from rydgate.operators import PhysicalConfig
from rydgate.optimizer import TrainingConfig


class TestFit:
    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.1, 1.0), st.floats(1.5, 2.5))
    def test_recovers_synthetic_hinge(self, a, pc_over_pi):
        pc = pc_over_pi * np.pi
        phis = np.linspace(0, 4 * np.pi, 17)
        y = a * np.maximum(pc - phis, 0) ** 2
        fit = fit_critical(phis, y)
        assert fit["success"]
        assert fit["phi_c"] == pytest.approx(pc, abs=1e-6)
        assert fit["A"] == pytest.approx(a, rel=1e-5)

    def test_noisy_data(self):
        rng = np.random.default_rng(0)
        phis = np.linspace(0, 4 * np.pi, 33)
        y = 0.37 * np.maximum(2.018 * np.pi - phis, 0) ** 2 + 1e-3 * rng.standard_normal(33)
        fit = fit_critical(phis, y)
        assert 1.95 < fit["phi_c_over_pi"] < 2.08

    def test_degenerate(self):
        assert not fit_critical([1.0], [0.5])["success"]
        assert not fit_critical([1.0, 2.0], [0.5, np.nan])["success"]


def test_plateaus():
    phis = np.array([np.pi, 2.5 * np.pi, 2.75 * np.pi, 3.5 * np.pi])
    out = plateaus(phis, [0.5, 0.01, 0.03, 0.004])
    assert out["2pi_3pi"] == pytest.approx(0.02)
    assert out["above_3pi"] == pytest.approx(0.004)
    assert plateaus([1.0], [0.1]) == {"2pi_3pi": None, "above_3pi": None}


class TestSeeds:
    def test_independent_of_order(self):
        seeds = {(g, r): point_seed(3, "sweep-phi", g, r) for g in range(4) for r in range(3)}
        assert len(set(seeds.values())) == 12
        assert point_seed(3, "sweep-phi", 2, 1) == seeds[(2, 1)]
        assert point_seed(3, "sweep-omega", 2, 1) != seeds[(2, 1)]
        assert point_seed(4, "sweep-phi", 2, 1) != seeds[(2, 1)]


def test_sweep_workers_give_identical_rows():
    cfg = PhysicalConfig(m=4, n_steps=512, r=8.0)
    tcfg = TrainingConfig(epochs=2, batch_size=2)
    phis = [3 * np.pi, np.pi]
    rows1, _ = sweep_phi(phis, cfg, tcfg, n_restarts=2, master_seed=1, workers=1)
    rows2, _ = sweep_phi(phis, cfg, tcfg, n_restarts=2, master_seed=1, workers=2)
    assert [r.key for r in rows1] == sorted(phis)
    assert [r.infidelities for r in rows1] == [r.infidelities for r in rows2]
