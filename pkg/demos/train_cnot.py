"""Train a CNOT protocol at a generous gate action and inspect it.

A coarse grid (2048 steps, 16 pulse nodes) keeps this to about a minute.
The trained pulses are written next to the script as ``demo_pulses.csv``.

    python demos/train_cnot.py [epochs]
"""

import sys
from pathlib import Path

import numpy as np

from rydgate.dynamics import EvolutionSpec, logical_block, propagate_unitary
from rydgate.operators import CNOT4, PhysicalConfig
from rydgate.optimizer import TrainingConfig, train
from rydgate.protocol import pulse_table
from rydgate.robustness import trace_error

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 120
cfg = PhysicalConfig(m=16, n_steps=2048).with_gate_action(4 * np.pi)
print(f"r = {cfg.r:.2f} um, V/hbar = {cfg.v_over_hbar:.3e} rad/s, tau = {cfg.tau} us")


def report(epoch, loss):
    if epoch % 20 == 0:
        print(f"epoch {epoch:4d}  batch loss {loss:.4f}")


rec = train(TrainingConfig(epochs=epochs, seed=1), cfg, callback=report)
print(f"validation infidelity: {rec.final_infidelity:.2e}")

# the logical block of the trained propagator, up to a global phase
u = propagate_unitary(EvolutionSpec(rec.theta, cfg, mode="propagator"))
block = logical_block(u)
phase = np.trace(block.conj().T @ CNOT4)
print("logical block (phase removed, rounded):")
print(np.round(block * np.conj(phase) / abs(phase), 3))
print(f"trace error: {trace_error(block):.2e}")

out = Path(__file__).with_name("demo_pulses.csv")
out.write_text(pulse_table(rec.theta, cfg, n_points=257))
print(f"pulses written to {out}")
