"""Recovering known parameters from a synthetic season.

Run:  python3 demos/04_parameter_recovery.py [outer_iterations]

Generates a training season and a held-out season from the nominal
parameters, starts from a random parameter vector and alternates climate
and crop updates.  With the default of three outer iterations this takes
several minutes on one core.
"""
import sys
import time

import numpy as np

from diffgreenhouse import data, model
from diffgreenhouse import params as P
from diffgreenhouse import training as tr

outer = int(sys.argv[1]) if len(sys.argv) > 1 else 3
specs = model.REGISTRY
theta_true = P.constrain(P.nominal_vector())
season = data.synthetic_generate(theta_true, 14, seed=0)
holdout = data.synthetic_generate(theta_true, 14, seed=1)
init = P.random_vector(specs, np.random.default_rng(0)).raw
cfg = tr.TrainConfig(outer_iterations=outer, climate_iterations=50, crop_iterations=10, batch_size=8)

t0 = time.perf_counter()


def progress(kind, o, i):
    if kind == "refresh":
        print(f"  [{time.perf_counter() - t0:5.0f} s] outer {o}: refreshed start states", flush=True)


res = tr.train(season, init, cfg, validation=holdout, on_event=progress)
print("\nheld-out climate loss per outer iteration:")
for row in res.validation:
    print(f"  {row['outer']}: {row['climate_total']:.4f}")

before, after = tr.evaluate(holdout, init, cfg), tr.evaluate(holdout, res.theta_star, cfg)
print(f"\nfinal-day error on the held-out season ({after['final_date']}):")
print(f"  harvested weight {before['final_hw_error']:.1%} -> {after['final_hw_error']:.1%}")
print(f"  harvested count  {before['final_hc_error']:.1%} -> {after['final_hc_error']:.1%}")

ratio = P.constrain_raw(res.theta_star, specs) / theta_true
print("\nfitted / true, furthest from 1 first:")
for k in np.argsort(-np.abs(np.log(ratio)))[:8]:
    print(f"  {specs[k].name:>14} {ratio[k]:.2f}")
