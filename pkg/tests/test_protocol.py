import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rydgate.operators import PhysicalConfig
from rydgate.protocol import (
    ProtocolParams,
    apply_constraints,
    dphi_bounds,
    evaluate,
    init_protocol,
    interpolate,
    max_phase_slope,
    phase_of,
    phase_samples,
    pulse_arrays,
    pulse_table,
    satisfies_constraints,
)

CFG = PhysicalConfig()
M = CFG.m
finite = st.floats(-1e3, 1e3, allow_nan=False)


def random_params(rng, m=M, cfg=CFG):
    return ProtocolParams(rng.uniform(-0.2, 1.2, m) * cfg.omega_max,
                          rng.uniform(-0.2, 0.2, m),
                          rng.uniform(-0.2, 1.2, m) * cfg.a_max,
                          rng.uniform(-0.2, 1.2, m) * cfg.a_max,
                          rng.uniform(0, 3e5))


class TestInterpolate:
    def test_midpoint(self):
        assert interpolate([0.0, 1.0], 0.5, 1.0) == 0.5

    def test_start_and_end(self, rng):
        v = rng.standard_normal(M)
        assert interpolate(v, 0.0, 1.0) == v[0]
        assert interpolate(v, 1.0, 1.0) == v[-1]

    def test_constant(self):
        t = np.linspace(0, 2.0, 101)
        assert np.all(interpolate(np.full(M, 3.25), t, 2.0) == 3.25)

    def test_samples_reproduced(self, rng):
        v = rng.standard_normal(M)
        t = np.arange(M) / (M - 1)
        assert np.allclose(interpolate(v, t, 1.0), v, rtol=0, atol=1e-14)

    @pytest.mark.parametrize("t", [-1e-9, 1.0 + 1e-9])
    def test_rejects_outside(self, t):
        with pytest.raises(ValueError):
            interpolate([0.0, 1.0], t, 1.0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, 8, elements=finite), arrays(float, 8, elements=finite),
           finite, finite, st.floats(0, 1))
    def test_linear_in_values(self, v, w, a, b, t):
        lhs = interpolate(a * v + b * w, t, 1.0)
        rhs = a * interpolate(v, t, 1.0) + b * interpolate(w, t, 1.0)
        assert lhs == pytest.approx(rhs, abs=1e-6)


class TestPhase:
    def test_zero_increments(self):
        assert np.all(phase_of(np.zeros(M), np.linspace(0, 1, 50), 1.0) == 0)

    def test_equal_increments(self):
        d = 0.0123
        total = 0.0
        for _ in range(M):
            total += d
        assert phase_samples(np.full(M, d))[-1] == pytest.approx(total, rel=1e-14)
        assert phase_of(np.full(M, d), 1.0, 1.0) == pytest.approx(M * d, rel=1e-13)

    def test_max_slope_increments(self):
        _, hi = dphi_bounds(CFG)
        inc = np.full(M, hi)
        swing = phase_of(inc, 1.0, 1.0) - phase_of(inc, 0.0, 1.0)
        assert swing == pytest.approx((M - 1) * CFG.dphi_max * CFG.tau_s / (M - 1), rel=1e-12)
        assert swing == pytest.approx(math.pi * 1e-6 / 100e-9, rel=1e-12)

    def test_slope_bound_after_clamp(self, rng):
        theta = apply_constraints(random_params(rng), CFG)
        assert max_phase_slope(theta, CFG) <= CFG.dphi_max * (1 + 1e-12)


class TestEvaluate:
    def test_composition(self, rng):
        theta = random_params(rng)
        for t in (0.0, 0.3, 0.77, 1.0):
            s = evaluate(theta, t, CFG)
            amp = interpolate(theta.theta_omega, t, 1.0)
            phi = phase_of(theta.theta_dphi, t, 1.0)
            assert s.omega == pytest.approx(amp * np.exp(-1j * phi), rel=1e-14)
            assert s.a1 == interpolate(theta.theta_a1, t, 1.0)
            assert s.zeeman == theta.theta_b

    def test_vectorised_matches_scalar(self, rng):
        theta = random_params(rng)
        t = np.linspace(0, 1, 37)
        om, a1, a2 = pulse_arrays(theta, t, CFG)
        for k, tk in enumerate(t):
            s = evaluate(theta, tk, CFG)
            assert om[k] == pytest.approx(s.omega, rel=1e-13)
            assert a2[k] == pytest.approx(s.a2, rel=1e-13)


class TestConstraints:
    def test_in_range_unchanged(self, rng):
        theta = init_protocol(rng, CFG)
        assert satisfies_constraints(theta, CFG)
        assert np.array_equal(apply_constraints(theta, CFG).as_array(), theta.as_array())

    def test_lower_clamp(self):
        theta = ProtocolParams(np.r_[-5.0, np.zeros(M - 1)], np.zeros(M), np.zeros(M),
                               np.zeros(M), 1.5e5)
        assert apply_constraints(theta, CFG).theta_omega[0] == 0.0

    def test_zeeman_clamp(self):
        theta = ProtocolParams(np.zeros(M), np.zeros(M), np.zeros(M), np.zeros(M), 3e5)
        assert apply_constraints(theta, CFG).theta_b == 2e5

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_projection(self, seed):
        theta = random_params(np.random.default_rng(seed))
        once = apply_constraints(theta, CFG)
        twice = apply_constraints(once, CFG)
        assert np.array_equal(once.as_array(), twice.as_array())
        assert satisfies_constraints(once, CFG)
        lo, hi = dphi_bounds(CFG)
        assert np.all((once.theta_dphi >= lo) & (once.theta_dphi <= hi))
        assert np.all((once.theta_omega >= 0) & (once.theta_omega <= CFG.omega_max))


class TestInit:
    def test_bounds_and_ends(self, rng):
        for _ in range(20):
            theta = init_protocol(rng, CFG)
            for arr, top in ((theta.theta_omega, CFG.omega_max), (theta.theta_a1, CFG.a_max),
                             (theta.theta_a2, CFG.a_max)):
                assert np.all((arr >= 0) & (arr <= top))
                assert arr[0] == 0 and arr[-1] == 0
            assert CFG.b_min <= theta.theta_b <= CFG.b_max
            assert theta.theta_dphi[0] == 0
            assert satisfies_constraints(theta, CFG)

    def test_increment_clamp_binds(self):
        # a spread of 1.5 rad exceeds the per-sample band at m = 64
        _, hi = dphi_bounds(CFG)
        assert hi < 1.5
        theta = init_protocol(np.random.default_rng(3), CFG)
        assert np.sum(np.abs(theta.theta_dphi) == hi) > M // 2

    def test_seeded(self):
        a = init_protocol(np.random.default_rng(11), CFG).as_array()
        b = init_protocol(np.random.default_rng(11), CFG).as_array()
        assert np.array_equal(a, b)

    def test_slow_modes(self, rng):
        # sixteen modes: no structure faster than sin(16 pi t)
        theta = init_protocol(rng, PhysicalConfig(m=512))
        spec = np.abs(np.fft.rfft(np.sqrt(theta.theta_omega / CFG.omega_max)))
        assert spec[40:].sum() < 0.2 * spec.sum()


class TestSerialisation:
    def test_vector_roundtrip(self, rng):
        theta = init_protocol(rng, CFG)
        u = theta.to_vector(CFG)
        assert u.shape == (4 * M + 1,) == (257,)
        assert np.all((u >= -1e-12) & (u <= 1 + 1e-12))
        back = ProtocolParams.from_vector(u, CFG)
        assert np.allclose(back.as_array(), theta.as_array(), rtol=1e-14, atol=1e-12)

    def test_json_roundtrip(self, rng):
        theta = init_protocol(rng, CFG)
        back = ProtocolParams.from_json(theta.to_json(CFG))
        assert np.array_equal(back.as_array(), theta.as_array())

    def test_bad_lengths(self):
        with pytest.raises(ValueError):
            ProtocolParams(np.zeros(4), np.zeros(3), np.zeros(4), np.zeros(4), 1e5)
        with pytest.raises(ValueError):
            ProtocolParams.from_array(np.zeros(10))

    def test_pulse_table(self, rng):
        theta = init_protocol(rng, CFG)
        text = pulse_table(theta, CFG, n_points=11)
        lines = text.strip().split("\n")
        assert lines[0] == "t_us,abs_omega,phase,a1,a2"
        assert len(lines) == 12
        assert float(lines[-1].split(",")[0]) == 1.0
