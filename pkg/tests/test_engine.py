import numpy as np
import pytest

from rydgate.dynamics import EvolutionSpec, logical_block, propagate_unitary
from rydgate.engine import (
    DensityLoss,
    UnitaryLoss,
    _from_stack,
    _to_stack,
    channel_fidelities,
    logical_fidelities,
    make_loss,
)
from rydgate.operators import CNOT4, PhysicalConfig, random_qubit_states
from rydgate.optimizer import forward_difference
from rydgate.protocol import ProtocolParams, init_protocol

EPS = 1e-6


def brute_gradient(engine, u, eps):
    """Forward differences from complete re-propagations."""
    f = lambda x: engine.loss(ProtocolParams.from_vector(x, engine.cfg))  # noqa: E731
    return forward_difference(f, u, eps)


@pytest.fixture
def tiny():
    cfg = PhysicalConfig(m=6, n_steps=512, r=8.0)
    theta = init_protocol(np.random.default_rng(2), cfg)
    states = random_qubit_states(np.random.default_rng(3), 8)
    return cfg, theta, states


class TestUnitaryLoss:
    def test_propagator_matches_reference(self, tiny):
        cfg, theta, states = tiny
        cfg = cfg.replace(n_steps=1024)
        eng = UnitaryLoss(cfg, states, CNOT4)
        ref = propagate_unitary(EvolutionSpec(theta, cfg, mode="propagator"), reduced=True)
        assert np.abs(eng.propagator(theta) - ref).max() < 1e-13

    def test_loss_matches_per_state_overlap(self, tiny):
        cfg, theta, states = tiny
        eng = UnitaryLoss(cfg, states, CNOT4)
        block = logical_block(eng.propagator(theta))
        f = [abs(np.vdot(CNOT4 @ psi, block @ psi)) ** 2 for psi in states]
        assert eng.loss(theta) == pytest.approx(1 - np.mean(f), abs=1e-14)

    def test_gradient_matches_brute_force(self, tiny):
        cfg, theta, states = tiny
        eng = UnitaryLoss(cfg, states, CNOT4)
        # push a few coordinates outside [0, 1] to exercise unclamped evaluation
        u = theta.to_vector(cfg)
        u[[1, 7, 14]] = [1.0, -0.01, 1.0]
        base, grad = eng.loss_and_gradient(u, EPS)
        ref_base, ref_grad = brute_gradient(eng, u, EPS)
        assert base == pytest.approx(ref_base, abs=1e-14)
        assert np.abs(grad - ref_grad).max() < 1e-8

    def test_phase_gradient_of_first_increment_vanishes(self, tiny):
        # a constant phase offset is a gauge of |R> and leaves the loss unchanged
        cfg, theta, states = tiny
        eng = UnitaryLoss(cfg, states, CNOT4)
        _, grad = eng.loss_and_gradient(theta.to_vector(cfg), EPS)
        assert abs(grad[cfg.m]) < 1e-9

    def test_time_dependent_interaction(self, tiny):
        cfg, theta, states = tiny
        cfg = cfg.replace(n_steps=1024)
        eng = UnitaryLoss(cfg, states, CNOT4)
        v = np.linspace(0.5, 1.5, 512) * cfg.v_over_hbar
        ref = propagate_unitary(EvolutionSpec(theta, cfg, v=v, mode="propagator"), reduced=True)
        assert np.abs(eng.propagator(theta, v=v) - ref).max() < 1e-13

    def test_perfect_block(self, tiny):
        cfg, _, states = tiny
        eng = UnitaryLoss(cfg, states, CNOT4)
        assert eng.losses(CNOT4) == pytest.approx(0, abs=1e-15)
        assert eng.losses(1j * CNOT4) == pytest.approx(0, abs=1e-15)
        lit = UnitaryLoss(cfg, states, CNOT4, loss_mode="literal")
        assert lit.losses(CNOT4) == pytest.approx(0.75)

    def test_rejects_decay(self, tiny):
        cfg, _, states = tiny
        with pytest.raises(ValueError):
            UnitaryLoss(cfg.replace(gamma=0.1), states, CNOT4)
        assert isinstance(make_loss(cfg.replace(gamma=0.1), states, CNOT4), DensityLoss)


class TestDensityLoss:
    def test_closed_system_agreement(self, tiny):
        cfg, theta, states = tiny
        cfg = cfg.replace(n_steps=2048)
        d = DensityLoss(cfg, states, CNOT4).loss(theta)
        u = UnitaryLoss(cfg, states, CNOT4).loss(theta)
        assert d == pytest.approx(u, abs=1e-7)

    def test_channel_matches_unitary_at_zero_decay(self, tiny):
        cfg, theta, states = tiny
        cfg = cfg.replace(n_steps=2048)
        chi = DensityLoss(cfg, states, CNOT4).channel(theta)
        block = logical_block(UnitaryLoss(cfg, states, CNOT4).propagator(theta))
        f_ch = channel_fidelities(chi, states, CNOT4)
        f_u = logical_fidelities(block, states, CNOT4)
        assert np.abs(f_ch - f_u).max() < 1e-7

    def test_adjoint_step(self, tiny):
        cfg, theta, states = tiny
        eng = DensityLoss(cfg.replace(gamma=0.3), states, CNOT4)
        a = eng.step_generators(eng.controls(theta)[2])[17]
        rng = np.random.default_rng(0)
        shape = (16, 9, 9)
        x = _to_stack(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        y = _to_stack(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        lhs = 1 - eng._loss_from(y, eng._step(a, x))
        rhs = 1 - eng._loss_from(eng._step_t(a, y), x)
        assert abs(lhs - rhs) < 1e-12 * abs(lhs)

    def test_stack_roundtrip(self):
        x = np.random.default_rng(0).standard_normal((16, 9, 9))
        assert np.array_equal(_from_stack(_to_stack(x)), x)

    def test_gradient_matches_brute_force(self):
        cfg = PhysicalConfig(m=4, n_steps=256, r=8.0, gamma=0.5)
        theta = init_protocol(np.random.default_rng(4), cfg)
        states = random_qubit_states(np.random.default_rng(5), 4)
        eng = DensityLoss(cfg, states, CNOT4)
        u = theta.to_vector(cfg)
        base, grad = eng.loss_and_gradient(u, EPS)
        ref_base, ref_grad = brute_gradient(eng, u, EPS)
        assert base == pytest.approx(ref_base, abs=1e-13)
        assert np.abs(grad - ref_grad).max() < 1e-8

    def test_decay_raises_loss(self, tiny):
        cfg, theta, states = tiny
        losses = [DensityLoss(cfg.replace(gamma=g), states, CNOT4).loss(theta)
                  for g in (0.0, 0.01, 0.1)]
        assert losses[0] < losses[1] < losses[2]

    def test_trace_decreases_only_by_shelving(self, tiny):
        cfg, theta, states = tiny
        for g, branching in ((0.2, 20.0), (0.2, 1e-12)):
            c = cfg.replace(gamma=g, branching=branching)
            x = DensityLoss(c, states, CNOT4).forward(theta)
            traces = np.einsum("kii->k", x[[0, 5, 10, 15]]).real
            if branching < 1e-6:
                assert np.allclose(traces, 1, atol=1e-9)
            else:
                assert np.all(traces < 1)
