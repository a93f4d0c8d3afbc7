"""Pair copulas: what the h-function is, and how a family gets picked.

Run:  python3 demos/01_pair_copulas.py
"""

import numpy as np

from rvinefusion.copulas import BivariateCopula, select_best
from rvinefusion.marginals import kendall_tau

rng = np.random.default_rng(7)

# A Clayton copula with theta = 2 clusters in the lower-left corner.
# Its Kendall tau has the closed form theta / (theta + 2).
c = BivariateCopula("clayton", (2.0,))
print(c, "tau =", round(c.tau(), 4))

# The h-function is the conditional cdf of U given V = v.  Inverting it
# in the first argument is how every sampler in the package works.
u, v = 0.3, 0.7
w = c.hfunc(u, v)
print("h(0.3 | 0.7) =", float(w), " hinv back ->", float(c.hinv(w, v)))

# Rotating by 180 degrees moves the tail dependence to the upper-right.
xy = c.sample(20_000, rng)
flipped = BivariateCopula("clayton", (2.0,), rotation=180).sample(20_000, rng)
lower = np.mean((xy[:, 0] < 0.05) & (xy[:, 1] < 0.05))
upper = np.mean((flipped[:, 0] > 0.95) & (flipped[:, 1] > 0.95))
print(f"joint 5% tail mass  clayton lower: {lower:.4f}  rotated upper: {upper:.4f}  independent: {0.05**2:.4f}")

# Selection: fit each candidate by maximum likelihood and keep the lowest AIC.
print("empirical tau of the sample:", round(kendall_tau(xy[:, 0], xy[:, 1]), 4))
best = select_best(xy[:2000], families=("gauss", "clayton", "frank", "gumbel"))
print("selected:", best.copula, " aic =", round(best.aic, 1))
