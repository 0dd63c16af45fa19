"""Reverse-mode gradients of the climate loss against finite differences.

Run:  python3 demos/03_gradient_check.py

Training needs d(loss)/d(theta*) for all parameters through a rollout of
many model steps.  A central difference costs two rollouts per parameter;
one taped rollout gives the whole vector.
"""
import time

import numpy as np

from diffgreenhouse import autodiff as ad
from diffgreenhouse import data, model
from diffgreenhouse import params as P
from diffgreenhouse import training as tr

specs = model.REGISTRY
ds = data.synthetic_generate(P.constrain(P.nominal_vector()), days=2, seed=1, harvest_start_day=0)
cfg = tr.TrainConfig(batch_size=4)
batch = tr.sample_climate_batch(ds, ds.truth, 4, 24, np.random.default_rng(0))
theta_star = P.random_vector(specs, np.random.default_rng(1)).raw


def loss(ts):
    theta = P.constrain_raw(ts, specs)
    states = tr.rollout(batch.x0, batch.controls, batch.weather, theta, 24).states
    return tr.climate_loss(states, batch.truth, cfg.climate_weights)


t0 = time.perf_counter()
value, grad = ad.run_with_gradient(loss, theta_star)
t1 = time.perf_counter()
fd = ad.finite_difference_gradient(loss, theta_star, step=1e-5)
t2 = time.perf_counter()

print(f"loss {value:.6g}; reverse mode {t1 - t0:.2f} s, finite differences {t2 - t1:.2f} s\n")
print(f"{'parameter':>14} {'reverse':>12} {'central':>12} {'rel diff':>9}")
for s, g, f in zip(specs, grad, fd):
    rel = abs(g - f) / abs(f) if f else float(g != 0)
    print(f"{s.name:>14} {g:12.4e} {f:12.4e} {rel:9.1e}")
