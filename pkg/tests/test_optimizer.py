import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydgate.dynamics import EvolutionSpec, propagate_unitary
from rydgate.operators import (
    CNOT4,
    PhysicalConfig,
    embed_logical,
    logical_to_density,
    random_qubit_states,
)
from rydgate.optimizer import (
    AdamConfig,
    AdamState,
    TrainingConfig,
    TrainingError,
    adam_step,
    derive_rng,
    fd_gradient,
    fidelity,
    forward_difference,
    loss,
    per_state_fidelities,
    train,
)
from rydgate.protocol import ProtocolParams, init_protocol, satisfies_constraints

TINY = PhysicalConfig(m=6, n_steps=512, r=8.0)


class TestFidelity:
    def test_perfect_gate(self, rng):
        u = embed_logical(CNOT4)
        rho0 = logical_to_density(random_qubit_states(rng, 1)[0])
        final = u @ rho0 @ u.conj().T
        assert fidelity(final, rho0, u) == pytest.approx(1.0, abs=1e-14)
        assert fidelity(final, rho0, u, mode="literal") == pytest.approx(0.25, abs=1e-14)

    def test_orthogonal_state(self):
        rho0 = logical_to_density(np.array([1, 0, 0, 0]))
        final = logical_to_density(np.array([0, 1, 0, 0]))
        assert fidelity(final, rho0, embed_logical(CNOT4)) == 0.0

    def test_leakage_lowers_fidelity(self):
        rho0 = logical_to_density(np.array([0, 0, 1, 0]))
        final = 0.5 * logical_to_density(np.array([0, 0, 0, 1]))
        final[0, 0] = 0.5
        assert fidelity(final, rho0, embed_logical(CNOT4)) == pytest.approx(0.5)


class TestLoss:
    def test_identity_gate_against_per_state_oracle(self, rng):
        # zero pulses at V = 0 with no Zeeman splitting: the propagator is I
        cfg = TINY.replace(b_min=0.0, b_max=0.0, r=np.inf)
        m = cfg.m
        theta = ProtocolParams(np.zeros(m), np.zeros(m), np.zeros(m), np.zeros(m), 0.0)
        batch = random_qubit_states(rng, 32)
        oracle = per_state_fidelities(np.eye(16), batch)
        assert loss(theta, batch, cfg) == pytest.approx(1 - oracle.mean(), abs=1e-14)
        # direct overlap |<psi| CNOT |psi>|^2 per state
        direct = [abs(np.vdot(psi, CNOT4 @ psi)) ** 2 for psi in batch]
        assert np.allclose(oracle, direct, atol=1e-14)

    def test_random_protocol_against_full_propagator(self, rng):
        cfg = TINY.replace(n_steps=1024)
        theta = init_protocol(rng, cfg)
        batch = random_qubit_states(rng, 16)
        u16 = propagate_unitary(EvolutionSpec(theta, cfg, mode="propagator"))
        oracle = 1 - per_state_fidelities(u16, batch).mean()
        assert loss(theta, batch, cfg) == pytest.approx(oracle, abs=1e-12)

    def test_literal_mode_scale(self, rng):
        theta = init_protocol(rng, TINY)
        batch = random_qubit_states(rng, 4)
        normal = loss(theta, batch, TINY)
        literal = loss(theta, batch, TINY, loss_mode="literal")
        assert 1 - literal == pytest.approx(0.25 * (1 - normal), abs=1e-14)


class TestGradient:
    def test_quadratic(self, rng):
        x = rng.standard_normal(12)
        eps = 1e-4
        f0, g = forward_difference(lambda v: float(np.sum(v**2)), x, eps)
        assert f0 == pytest.approx(np.sum(x**2))
        assert np.allclose(g, 2 * x + eps, atol=1e-9)

    def test_richardson_consistency(self, rng):
        theta = init_protocol(rng, TINY)
        batch = random_qubit_states(rng, 8)
        l1, g1 = fd_gradient(theta, batch, TINY, eps=1e-6)
        _, g2 = fd_gradient(theta, batch, TINY, eps=5e-7)
        assert np.abs(g1 - g2).max() < abs(l1) * 1e-3

    def test_perturbation_before_clamp(self, rng):
        # amplitudes at their upper bound: the perturbed point lies outside the band
        cfg = TINY
        theta = init_protocol(rng, cfg)
        u = theta.to_vector(cfg)
        u[: cfg.m] = 1.0
        batch = random_qubit_states(rng, 4)
        eps = 1e-6
        theta_top = ProtocolParams.from_vector(u, cfg)
        base, grad = fd_gradient(theta_top, batch, cfg, eps=eps)
        up = u.copy()
        up[2] += eps
        outside = ProtocolParams.from_vector(up, cfg)
        assert not satisfies_constraints(outside, cfg)
        expected = (loss(outside, batch, cfg) - base) / eps
        assert grad[2] == pytest.approx(expected, abs=1e-7)
        assert grad[2] != 0.0


class TestAdam:
    def test_zero_gradient(self):
        x = np.full(5, 0.3)
        state = AdamState(np.full(5, 0.2), np.full(5, 0.1), 3)
        x2, s2 = adam_step(x, np.zeros(5), state)
        assert np.allclose(x2, x - AdamConfig().lr * (0.9 * 0.2 / (1 - 0.9**4))
                           / (np.sqrt(0.999 * 0.1 / (1 - 0.999**4)) + 1e-8))
        assert np.allclose(s2.m, 0.9 * state.m) and np.allclose(s2.v, 0.999 * state.v)
        fresh, _ = adam_step(x, np.zeros(5), AdamState.zeros(5))
        assert np.array_equal(fresh, x)

    def test_constant_gradient_step_size(self):
        cfg = AdamConfig(lr=1e-3)
        x = np.zeros(3)
        g = np.array([2.0, -0.5, 1e-3])
        state = AdamState.zeros(3)
        for _ in range(3000):
            prev = x
            x, state = adam_step(x, g, state, cfg, project=lambda v: v)
        assert np.allclose(x - prev, -cfg.lr * np.sign(g), rtol=1e-4)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-4, 10.0))
    def test_clamped(self, seed, lr):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 1, 20)
        x2, _ = adam_step(x, rng.standard_normal(20) * 100, AdamState.zeros(20), AdamConfig(lr=lr))
        assert np.all((x2 >= 0) & (x2 <= 1))

    def test_inputs_untouched(self):
        x, g, s = np.full(4, 0.5), np.ones(4), AdamState.zeros(4)
        adam_step(x, g, s)
        assert np.all(x == 0.5) and s.t == 0 and not np.any(s.m)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(3), np.zeros(4), AdamState.zeros(3))

    def test_schedule(self):
        cfg = AdamConfig(lr=0.1, lr_final=0.01)
        assert cfg.lr_at(0, 11) == pytest.approx(0.1)
        assert cfg.lr_at(10, 11) == pytest.approx(0.01)
        assert AdamConfig(lr=0.1).lr_at(5, 11) == 0.1


class TestTrain:
    def test_deterministic(self):
        tcfg = TrainingConfig(epochs=4, batch_size=4, seed=3)
        a = train(tcfg, TINY)
        b = train(tcfg, TINY)
        assert np.array_equal(a.losses, b.losses)
        assert np.array_equal(a.theta.as_array(), b.theta.as_array())
        assert a.validation_fidelity == b.validation_fidelity
        assert len(a.losses) == 4 and np.all(np.isfinite(a.losses))
        c = train(TrainingConfig(epochs=4, batch_size=4, seed=4), TINY)
        assert not np.array_equal(a.losses, c.losses)

    def test_record_and_constraints(self):
        rec = train(TrainingConfig(epochs=3, batch_size=2, seed=0, adam=AdamConfig(lr=0.5)), TINY)
        assert satisfies_constraints(rec.theta, TINY)
        assert rec.final_infidelity == pytest.approx(1 - rec.validation_fidelity)
        assert rec.config["training"]["epochs"] == 3
        assert rec.wall_ms.shape == (3,)

    def test_descends_on_fixed_batch(self):
        tcfg = TrainingConfig(epochs=25, batch_size=4, seed=1, resample_each_epoch=False)
        rec = train(tcfg, TINY)
        assert rec.losses[-1] < rec.losses[0]

    def test_non_finite_aborts(self):
        with pytest.raises(TrainingError):
            train(TrainingConfig(epochs=2, batch_size=2), TINY, v=np.nan)

    @pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"batch_size": 0}, {"fd_epsilon": 0.0},
                                        {"loss_mode": "other"}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainingConfig(**kwargs)

    def test_streams_independent(self):
        a = derive_rng(5, 1, 0).random(3)
        b = derive_rng(5, 1, 1).random(3)
        c = derive_rng(5, 1, 0).random(3)
        assert np.array_equal(a, c) and not np.array_equal(a, b)
