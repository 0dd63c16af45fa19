"""A synthetic two-week season and what the unobserved crop states do.

Run:  python3 demos/02_synthetic_season.py

The climate channels and the daily harvest totals are what a grower would
record.  Buffer, leaf and fruit carbohydrate and the fruit count are never
measured, so a season start has to guess them.  The guess is forgotten
within a few days because the pools turn over quickly.
"""
import numpy as np

from diffgreenhouse import data, model
from diffgreenhouse import params as P
from diffgreenhouse.simulator import Seeds, season_rollout

theta = P.constrain(P.nominal_vector())
ds = data.synthetic_generate(theta, days=14, seed=0)
obs = ds.observations

print(f"{len(ds)} rows from {ds.timestamps[0]} to {ds.timestamps[-1]}\n")
print(f"{'day':>3} {'T_air min-max':>14} {'VP mean':>8} {'CO2 max':>8} {'HW':>7} {'HC':>6}")
for day in range(14):
    rows = slice(day * 288, day * 288 + 288)
    t = obs[rows, model.IDX["T_air"]]
    end = day * 288 + 287
    print(f"{day:3d} {t.min():6.1f}-{t.max():5.1f} C {obs[rows, 1].mean():8.0f} "
          f"{obs[rows, 2].max():8.0f} {ds.truth[end, 9]:7.3f} {ds.truth[end, 10]:6.2f}")

hidden = [model.IDX[c] for c in ("C_buf", "C_leaf", "C_fruit", "N_fruit")]
a = season_rollout(ds, theta, Seeds())[:, hidden]
b = season_rollout(ds, theta, Seeds().scaled_carbohydrates(2.0))[:, hidden]
gap = np.abs(b - a) / np.abs(a)
print("\nlargest relative difference between runs seeded with 1x and 2x carbohydrate:")
for day in (0, 1, 2, 3, 5, 8, 13):
    print(f"  day {day:2d}: {gap[day * 288:(day + 1) * 288].max():.1%}")
