"""How much does jitter in the atom spacing hurt a trained gate?

Trains one protocol at r = 7 um and one at r = 10 um (short runs), then
averages the trace error over noisy distance trajectories for a few
noise strengths. The closer pair sits where the interaction is still
changing quickly with distance, so it suffers more.

    python demos/distance_noise.py
"""

from rydgate.operators import PhysicalConfig
from rydgate.optimizer import TrainingConfig, train
from rydgate.robustness import transformation_error

sigmas = (0.0, 0.1, 0.3, 0.5)
for r in (7.0, 10.0):
    cfg = PhysicalConfig(r=r, n_steps=4096)
    rec = train(TrainingConfig(epochs=100, seed=0), cfg)
    print(f"r = {r:4.1f} um  trained infidelity {rec.final_infidelity:.2e}")
    for s in sigmas:
        res = transformation_error([rec.theta], r, s, n_traj=10, cfg=cfg)
        print(f"    sigma_r = {s:.1f} um  eps = {res.epsilon:.2e} +- {res.stderr:.1e}")
