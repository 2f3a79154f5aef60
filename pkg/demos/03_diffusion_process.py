"""
The diffusion process on a toy distribution
===========================================

A tiny pointwise network learns to denoise scalars drawn from two spikes at
-0.5 and +0.5. The same schedule and sampler drive the waveform model.
"""

import numpy as np

from eventfoley.diffusion import SamplerConfig, TrainConfig, alpha_bar, noise, sample, schedule, training_step
from eventfoley.nn import MLP, ParamStore, random_source
from eventfoley.training import Adam

t = np.linspace(0, 1, 5)
a, s = schedule(t)
print("t         ", t)
print("signal    ", np.round(a, 4))
print("noise     ", np.round(s, 4))
print("alpha_bar + sigma^2:", alpha_bar(t) + s ** 2)

# forward noising keeps unit variance
x0 = np.random.default_rng(0).standard_normal((1, 50_000))
for tv in (0.25, 0.5, 0.75):
    xt, _ = noise(x0, [tv], np.random.default_rng(1))
    print(f"t={tv}: var {xt.var():.4f}")


class Pointwise:
    """eps_hat = MLP(x, t) applied to each scalar on its own."""

    def __init__(self):
        self.store = ParamStore(np.float64)
        self.mlp = MLP(self.store, "m", [4, 64, 64, 1], random_source(0), activation="silu")

    def _inputs(self, x, t):
        t = np.broadcast_to(np.asarray(t, dtype=np.float64)[:, None], x.shape)
        return np.stack([x, np.cos(np.pi * t / 2), np.sin(np.pi * t / 2), t], axis=-1)

    def forward(self, x, t, class_id=None, feature=None, drop=None):
        return self.mlp.forward(self._inputs(x, t))[..., 0]

    def backward(self, d):
        self.mlp.backward(d[..., None])

    predict_noise = forward


# every row of the batch is one scalar drawn from the two spikes
model = Pointwise()
opt = Adam(model.store, lr=3e-3)
rng = np.random.default_rng(0)
cfg = TrainConfig(cond_drop_p=0.0)
for step in range(2000):
    x0 = 0.5 * np.where(rng.uniform(size=(256, 1)) < 0.5, -1.0, 1.0)
    loss = training_step((x0, np.zeros(256, dtype=int), np.zeros((256, 1))), model, cfg, rng)
    opt.step(1.0)
    if step % 500 == 0:
        print(f"step {step}: loss {loss:.4f}")

draws = sample(model, None, None, SamplerConfig(steps=100, guidance=1.0, seed=3), n=500, length=1)[:, 0]
near = np.mean(np.abs(np.abs(draws) - 0.5) < 0.1)
print(f"{near:.0%} of 500 samples land within 0.1 of a spike; {np.mean(draws > 0):.0%} are positive")
