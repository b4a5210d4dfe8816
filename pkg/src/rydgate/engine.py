"""Fast batch loss and forward-difference gradients on the reduced 9-dim space.

The ``|s>`` level never feeds back into the other levels, so everything the
loss needs lives on ``(R,1,0) x (R,1,0)``. RK4 applied to a linear equation
is a product of per-step maps ``Phi_k``; a forward-difference perturbation of
one pulse sample only changes the maps of the few steps whose evaluation
points see that sample. With prefix and suffix products precomputed,

    U(theta + eps e_j) = S[k1] W_j P[k0],

where ``W_j`` is the product of the re-evaluated maps inside the window
``[k0, k1)``. A phase increment shifts the Rabi phase of the whole remaining
pulse by a constant; there the tail is the conjugation ``Z S Z^+`` with
``Z = exp(-i eps n_R)``, and ``Z`` acts trivially on the logical block.

The density-matrix variant propagates the 16 logical basis operators
forwards and the 16 loss observables backwards through the exact discrete
adjoint of the RK4 step, then re-integrates only the windows.
"""

from __future__ import annotations

import numpy as np

from .dynamics import half_step_times, v_steps
from .operators import (
    REDUCED_DIM,
    REDUCED_LOGICAL_INDICES,
    PhysicalConfig,
    control_operators,
)
from .protocol import ProtocolParams, interpolation_weights, normalisation, phase_samples

LOG = np.array(REDUCED_LOGICAL_INDICES)
_CHUNK_MATS = 200_000  # bound on (params x steps x points) per batched evaluation
_PROPAGATOR_CHUNK = 8192


def logical_fidelities(blocks: np.ndarray, states: np.ndarray, target: np.ndarray) -> np.ndarray:
    """``|<psi| C^+ B |psi>|^2`` for every block ``B`` and state ``psi``.

    ``blocks`` has shape ``(..., 4, 4)``; returns ``(..., n_states)``.
    """
    m = np.einsum("ki,...kj->...ij", target.conj(), blocks)
    amp = np.einsum("bi,...ij,bj->...b", states.conj(), m, states)
    return np.abs(amp) ** 2


def channel_fidelities(chi: np.ndarray, states: np.ndarray, target: np.ndarray) -> np.ndarray:
    """``Tr(C rho C^+ E(rho))`` for a logical channel ``chi[i, j] = E(|i><j|)``."""
    rho = np.einsum("bi,bj->bij", states, states.conj())
    out = np.einsum("bij,ijkl->bkl", rho, chi)
    tgt = np.einsum("ki,bij,lj->bkl", target, rho, target.conj())
    return np.einsum("blk,bkl->b", tgt, out).real


def fidelity_to_loss(f: np.ndarray, loss_mode: str) -> np.ndarray:
    scale = 0.25 if loss_mode == "literal" else 1.0
    return 1.0 - scale * f.mean(axis=-1)


class StepGrid:
    """RK4 evaluation points and the windows each parameter influences."""

    def __init__(self, cfg: PhysicalConfig):
        n, m = cfg.n_steps, cfg.m
        self.n, self.m = n, m
        self.h = cfg.tau_s / n
        self.i, self.p = interpolation_weights(half_step_times(cfg), cfg.tau, m)
        self.pts = 2 * np.arange(n)[:, None] + np.arange(3)[None, :]

        rows = np.arange(m)[:, None]
        touch = ((self.i[None, :] == rows) & (self.p[None, :] != 1.0)) | \
                ((self.i[None, :] + 1 == rows) & (self.p[None, :] != 0.0))
        step_touch = touch[:, self.pts].any(axis=-1)
        self.amp_k0 = np.argmax(step_touch, axis=1)
        self.amp_k1 = n - np.argmax(step_touch[:, ::-1], axis=1)

        shift = np.where(self.i[None, :] < rows - 1, 0.0,
                         np.where(self.i[None, :] == rows - 1, self.p[None, :], 1.0))
        shift_steps = shift[:, self.pts]
        before = np.all(shift_steps == 0.0, axis=-1)
        after = np.all(shift_steps == 1.0, axis=-1)
        self.phase_k0 = np.where(before.all(axis=1), n, np.argmin(before, axis=1))
        self.phase_k1 = np.where(after.any(axis=1), np.argmax(after, axis=1), n)
        self.phase_k0 = np.minimum(self.phase_k0, self.phase_k1)


def _rk4_maps(g: np.ndarray) -> np.ndarray:
    """Step maps from generators ``g[..., 3, d, d]`` already scaled by ``-i h``."""
    g0, g1, g2 = g[..., 0, :, :], g[..., 1, :, :], g[..., 2, :, :]
    k2 = g1 + 0.5 * (g1 @ g0)
    k3 = g1 + 0.5 * (g1 @ k2)
    k4 = g2 + g2 @ k3
    out = (g0 + 2 * k2 + 2 * k3 + k4) / 6.0
    idx = np.arange(g.shape[-1])
    out[..., idx, idx] += 1.0
    return out


class _Problem:
    """Shared set-up: controls at evaluation points and generator operators."""

    def __init__(self, cfg: PhysicalConfig, states, target, v=None, loss_mode="normalized"):
        if loss_mode not in ("normalized", "literal"):
            raise ValueError(f"unknown loss_mode {loss_mode!r}")
        self.cfg = cfg
        self.grid = StepGrid(cfg)
        self.target = np.asarray(target, dtype=complex)
        self.loss_mode = loss_mode
        self.vk = v_steps(v, cfg)
        ops = control_operators(reduced=True)
        h = self.grid.h
        self.gen_ops = -1j * h * np.array([ops[k] for k in ("hz", "hx", "hy", "ha1", "ha2")])
        self.n_r = np.diag(ops["n_r"])
        self.lo, self.span = normalisation(cfg)
        self.m = cfg.m
        self.set_states(states)

    def set_states(self, states) -> None:
        """Swap the batch of logical input states (shape ``(b, 4)``)."""
        self.states = np.asarray(states, dtype=complex)

    def controls(self, theta: ProtocolParams):
        """Amplitude, phase and coefficient table ``(2n+1, 5)`` at all points."""
        g = self.grid
        s = lambda v: (1 - g.p) * v[g.i] + g.p * v[g.i + 1]  # noqa: E731
        amp = s(theta.theta_omega)
        phi = s(phase_samples(theta.theta_dphi))
        omega = amp * np.exp(-1j * phi)
        coeff = np.empty((len(amp), 5))
        coeff[:, 0] = theta.theta_b
        coeff[:, 1] = omega.real
        coeff[:, 2] = omega.imag
        coeff[:, 3] = s(theta.theta_a1)
        coeff[:, 4] = s(theta.theta_a2)
        return amp, phi, coeff

    def generators(self, coeff: np.ndarray, vk: np.ndarray) -> np.ndarray:
        """``-i h H`` for coefficient rows ``(..., 3, 5)``; shape ``(..., 3, d, d)``."""
        g = np.tensordot(coeff, self.gen_ops, axes=1)
        g[..., 0, 0] += (-1j * self.grid.h) * vk[..., None]
        return g

    def _window_coeffs(self, js, group, theta, amp, phi, coeff, eps_phys):
        """Perturbed coefficient tables for the windows of parameters ``js``."""
        g = self.grid
        if group == "dphi":
            k0, k1 = g.phase_k0[js], g.phase_k1[js]
        else:
            k0, k1 = g.amp_k0[js], g.amp_k1[js]
        length = int(np.max(k1 - k0)) if len(js) else 0
        ks = k0[:, None] + np.arange(max(length, 1))[None, :]
        valid = ks < k1[:, None]
        ks = np.minimum(ks, g.n - 1)
        q = g.pts[ks]
        ii, pp = g.i[q], g.p[q]
        jj = js[:, None, None]
        c = coeff[q].copy()
        if group == "dphi":
            ph = phase_samples(theta.theta_dphi)
            lo = ph[ii] + eps_phys * (ii >= jj)
            hi = ph[ii + 1] + eps_phys * (ii + 1 >= jj)
            om = amp[q] * np.exp(-1j * ((1 - pp) * lo + pp * hi))
            c[..., 1], c[..., 2] = om.real, om.imag
        else:
            vals = {"omega": theta.theta_omega, "a1": theta.theta_a1, "a2": theta.theta_a2}[group]
            lo = vals[ii] + eps_phys * (ii == jj)
            hi = vals[ii + 1] + eps_phys * (ii + 1 == jj)
            a = (1 - pp) * lo + pp * hi
            if group == "omega":
                om = a * np.exp(-1j * phi[q])
                c[..., 1], c[..., 2] = om.real, om.imag
            else:
                c[..., 3 if group == "a1" else 4] = a
        return k0, k1, ks, valid, c

    def _chunks(self, js, group):
        g = self.grid
        k0 = g.phase_k0 if group == "dphi" else g.amp_k0
        k1 = g.phase_k1 if group == "dphi" else g.amp_k1
        length = max(int(np.max(k1[js] - k0[js])), 1)
        size = max(1, _CHUNK_MATS // (3 * length))
        for start in range(0, len(js), size):
            yield js[start:start + size]

    def groups(self):
        m = self.m
        return (("omega", 0), ("dphi", m), ("a1", 2 * m), ("a2", 3 * m))


class UnitaryLoss(_Problem):
    """Loss and gradient for closed-system (``gamma == 0``) evolution."""

    def __init__(self, cfg, states, target, v=None, loss_mode="normalized"):
        if cfg.gamma != 0:
            raise ValueError("UnitaryLoss needs gamma == 0; use DensityLoss")
        super().__init__(cfg, states, target, v, loss_mode)

    def step_maps(self, coeff: np.ndarray, vk: np.ndarray | None = None) -> np.ndarray:
        vk = self.vk if vk is None else vk
        return _rk4_maps(self.generators(coeff[self.grid.pts], vk))

    def propagator(self, theta: ProtocolParams, v=None) -> np.ndarray:
        """Reduced 9x9 propagator ``U(tau)``; ``v`` overrides the interaction."""
        vk = self.vk if v is None else v_steps(v, self.cfg)
        coeff = self.controls(theta)[2]
        pts = self.grid.pts
        u = np.eye(REDUCED_DIM, dtype=complex)
        # bounded memory for long grids
        for s in range(0, self.grid.n, _PROPAGATOR_CHUNK):
            sl = slice(s, s + _PROPAGATOR_CHUNK)
            for phi_k in _rk4_maps(self.generators(coeff[pts[sl]], vk[sl])):
                u = phi_k @ u
        return u

    def losses(self, blocks: np.ndarray) -> np.ndarray:
        f = logical_fidelities(blocks, self.states, self.target)
        return fidelity_to_loss(f, self.loss_mode)

    def loss(self, theta: ProtocolParams) -> float:
        u = self.propagator(theta)
        return float(self.losses(u[LOG[:, None], LOG[None, :]]))

    def loss_and_gradient(self, u_norm: np.ndarray, eps: float):
        """Base loss and forward differences in normalised coordinates."""
        theta = ProtocolParams.from_vector(u_norm, self.cfg)
        amp, phi, coeff = self.controls(theta)
        maps = self.step_maps(coeff)
        n, d = self.grid.n, REDUCED_DIM
        prefix = np.empty((n + 1, d, d), dtype=complex)
        suffix = np.empty((n + 1, d, d), dtype=complex)
        prefix[0] = suffix[n] = np.eye(d)
        for k in range(n):
            prefix[k + 1] = maps[k] @ prefix[k]
        for k in range(n - 1, -1, -1):
            suffix[k] = suffix[k + 1] @ maps[k]
        # only the logical rows of the suffix and columns of the prefix matter
        suf_l = suffix[:, LOG, :]
        pre_l = prefix[:, :, LOG]
        base = float(self.losses(prefix[n][LOG[:, None], LOG[None, :]]))

        grad = np.zeros(4 * self.m + 1)
        for group, offset in self.groups():
            eps_phys = eps * self.span[offset]
            for js in self._chunks(np.arange(self.m), group):
                k0, k1, ks, valid, c = self._window_coeffs(js, group, theta, amp, phi,
                                                           coeff, eps_phys)
                pert = _rk4_maps(self.generators(c, self.vk[ks]))
                w_p = _window_product(pert, valid)
                w_b = _window_product(maps[ks], valid)
                if group == "dphi":
                    zc = np.exp(1j * eps_phys * self.n_r)
                    w_p = zc[:, None] * w_p
                b_p = suf_l[k1] @ w_p @ pre_l[k0]
                b_b = suf_l[k1] @ w_b @ pre_l[k0]
                grad[offset + js] = (self.losses(b_p) - self.losses(b_b)) / eps

        eps_b = eps * self.span[-1]
        coeff_b = coeff.copy()
        coeff_b[:, 0] = theta.theta_b + eps_b
        u_b = np.eye(d, dtype=complex)
        for phi_k in self.step_maps(coeff_b):
            u_b = phi_k @ u_b
        grad[-1] = (float(self.losses(u_b[LOG[:, None], LOG[None, :]])) - base) / eps
        return base, grad


def _window_product(maps: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Ordered products ``maps[:, L-1] ... maps[:, 0]`` skipping padded steps."""
    out = np.broadcast_to(np.eye(maps.shape[-1], dtype=complex), maps.shape[:1] + maps.shape[2:]).copy()
    for l in range(maps.shape[1]):
        sel = valid[:, l]
        if sel.all():
            out = maps[:, l] @ out
        elif sel.any():
            out[sel] = maps[sel, l] @ out[sel]
    return out


# --- open-system variant -------------------------------------------------
#
# Operator stacks are stored as (..., 9, n, 9) with x[..., r, k, c] the
# (r, c) entry of operator k, so left and right products with a 9x9 matrix
# are single matrix products over reshaped views.

def _left(a, x):
    sh = x.shape
    return (a @ x.reshape(sh[:-3] + (sh[-3], sh[-2] * sh[-1]))).reshape(sh)


def _right(x, b):
    sh = x.shape
    return (x.reshape(sh[:-3] + (sh[-3] * sh[-2], sh[-1])) @ b).reshape(sh)


def _jump(x: np.ndarray) -> np.ndarray:
    """``sum_j L_j X L_j^+`` for ``L_j = |1><R|_j`` (unit rate), 9-dim basis."""
    out = np.zeros_like(x)
    out[..., 3:6, :, 3:6] += x[..., 0:3, :, 0:3]
    out[..., 1::3, :, 1::3] += x[..., 0::3, :, 0::3]
    return out


def _jump_t(y: np.ndarray) -> np.ndarray:
    """Transpose of :func:`_jump` under ``Tr(Y X)``."""
    out = np.zeros_like(y)
    out[..., 0:3, :, 0:3] += y[..., 3:6, :, 3:6]
    out[..., 0::3, :, 0::3] += y[..., 1::3, :, 1::3]
    return out


def _to_stack(ops: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(ops, -3, -2))


def _from_stack(x: np.ndarray) -> np.ndarray:
    return np.moveaxis(x, -2, -3)


class DensityLoss(_Problem):
    """Loss and gradient for the master equation with Rydberg decay.

    Works for ``gamma == 0`` too, which is how it is cross-checked against
    :class:`UnitaryLoss`.
    """

    def __init__(self, cfg, states, target, v=None, loss_mode="normalized"):
        h = cfg.tau_s / cfg.n_steps
        self.jump_rate = h * cfg.gamma_1 * 1e6
        d = REDUCED_DIM
        basis = np.zeros((16, d, d), dtype=complex)
        for a in range(4):
            for b in range(4):
                basis[4 * a + b, LOG[a], LOG[b]] = 1.0
        self.inputs = _to_stack(basis)
        super().__init__(cfg, states, target, v, loss_mode)
        self.decay = 0.5 * h * cfg.gamma * 1e6 * self.n_r

    def set_states(self, states) -> None:
        super().set_states(states)
        rho = np.einsum("bi,bj->bij", self.states, self.states.conj())
        tgt = np.einsum("ki,bij,lj->bkl", self.target, rho, self.target.conj())
        scale = 0.25 if self.loss_mode == "literal" else 1.0
        weights = scale * np.einsum("bij,bkl->ijkl", rho, tgt) / len(self.states)
        obs = np.zeros((16, REDUCED_DIM, REDUCED_DIM), dtype=complex)
        for a in range(4):
            for b in range(4):
                obs[4 * a + b][LOG[:, None], LOG[None, :]] = weights[a, b]
        self.observables = _to_stack(obs)

    def _a(self, g):
        """Non-Hermitian part ``-i h H - h gamma/2 n_R`` from generators."""
        out = g.copy()
        idx = np.arange(REDUCED_DIM)
        out[..., idx, idx] -= self.decay
        return out

    def _lind(self, a, x):
        out = _left(a, x) + _right(x, np.conj(np.swapaxes(a, -1, -2)))
        if self.jump_rate:
            out += self.jump_rate * _jump(x)
        return out

    def _lind_t(self, a, y):
        out = _right(y, a) + _left(np.conj(np.swapaxes(a, -1, -2)), y)
        if self.jump_rate:
            out += self.jump_rate * _jump_t(y)
        return out

    def _step(self, a3, x):
        a0, am, a1 = a3[..., 0, :, :], a3[..., 1, :, :], a3[..., 2, :, :]
        k1 = self._lind(a0, x)
        k2 = self._lind(am, x + 0.5 * k1)
        k3 = self._lind(am, x + 0.5 * k2)
        k4 = self._lind(a1, x + k3)
        return x + (k1 + 2 * k2 + 2 * k3 + k4) / 6.0

    def _step_t(self, a3, y):
        a0, am, a1 = a3[..., 0, :, :], a3[..., 1, :, :], a3[..., 2, :, :]
        g_r3 = self._lind_t(a1, y / 6.0)
        g_k3 = y / 3.0 + g_r3
        g_r2 = self._lind_t(am, g_k3)
        g_k2 = y / 3.0 + 0.5 * g_r2
        g_r1 = self._lind_t(am, g_k2)
        g_k1 = y / 6.0 + 0.5 * g_r1
        return y + g_r3 + g_r2 + g_r1 + self._lind_t(a0, g_k1)

    def step_generators(self, coeff):
        return self._a(self.generators(coeff[self.grid.pts], self.vk))

    def forward(self, theta: ProtocolParams):
        """Images of the 16 logical basis operators, shape ``(16, 9, 9)``."""
        a = self.step_generators(self.controls(theta)[2])
        return _from_stack(self._forward(a)[0])

    def _forward(self, a, keep=()):
        keep = set(int(k) for k in keep)
        x = self.inputs
        kept = {0: x} if 0 in keep else {}
        for k in range(self.grid.n):
            x = self._step(a[k], x)
            if k + 1 in keep:
                kept[k + 1] = x
        return x, kept

    def channel(self, theta: ProtocolParams) -> np.ndarray:
        """Logical channel ``chi[i, j] = P E(|i><j|) P`` as ``(4, 4, 4, 4)``."""
        x = self.forward(theta)
        return x[:, LOG[:, None], LOG[None, :]].reshape(4, 4, 4, 4)

    @staticmethod
    def _loss_from(y, x) -> np.ndarray:
        return 1.0 - np.einsum("...inj,...jni->...", y, x).real

    def loss(self, theta: ProtocolParams) -> float:
        a = self.step_generators(self.controls(theta)[2])
        return float(self._loss_from(self.observables, self._forward(a)[0]))

    def loss_and_gradient(self, u_norm: np.ndarray, eps: float):
        theta = ProtocolParams.from_vector(u_norm, self.cfg)
        amp, phi, coeff = self.controls(theta)
        a = self.step_generators(coeff)
        g = self.grid
        bounds = set(np.concatenate([g.amp_k0, g.phase_k0, g.amp_k1, g.phase_k1]).tolist())
        x_final, xs = self._forward(a, keep=bounds | {g.n})
        ys = {g.n: self.observables}
        y = self.observables
        for k in range(g.n - 1, -1, -1):
            y = self._step_t(a[k], y)
            if k in bounds:
                ys[k] = y
        base = float(self._loss_from(self.observables, x_final))

        grad = np.zeros(4 * self.m + 1)
        for group, offset in self.groups():
            eps_phys = eps * self.span[offset]
            for js in self._chunks(np.arange(self.m), group):
                k0, k1, ks, valid, c = self._window_coeffs(js, group, theta, amp, phi,
                                                           coeff, eps_phys)
                ap = self._a(self.generators(c, self.vk[ks]))
                xp = np.array([xs[k] for k in k0])
                for l in range(ks.shape[1]):
                    sel = valid[:, l]
                    if sel.all():
                        xp = self._step(ap[:, l], xp)
                    elif sel.any():
                        xp[sel] = self._step(ap[sel, l], xp[sel])
                if group == "dphi":
                    z = np.exp(-1j * eps_phys * self.n_r)
                    xp = z.conj()[:, None, None] * xp * z
                y1 = np.array([ys[k] for k in k1])
                # the unperturbed window reproduces the stored snapshot at k1
                xb = np.array([xs[k] for k in k1])
                grad[offset + js] = (self._loss_from(y1, xp) - self._loss_from(y1, xb)) / eps

        coeff_b = coeff.copy()
        coeff_b[:, 0] = theta.theta_b + eps * self.span[-1]
        x_b, _ = self._forward(self.step_generators(coeff_b))
        grad[-1] = (float(self._loss_from(self.observables, x_b)) - base) / eps
        return base, grad


def make_loss(cfg: PhysicalConfig, states, target, v=None, loss_mode="normalized"):
    """Pick the closed- or open-system evaluator for ``cfg``."""
    cls = UnitaryLoss if cfg.gamma == 0 else DensityLoss
    return cls(cfg, states, target, v, loss_mode)
