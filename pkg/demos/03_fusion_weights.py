"""From local decisions to one global test.

Three sensors each send a bit.  The fusion centre needs the joint pmf
of the bit pattern under both hypotheses; with dependent sensors that
pmf comes from copula cdfs evaluated at the local rates.

Run:  python3 demos/03_fusion_weights.py
"""

import numpy as np

from rvinefusion.copulas import BivariateCopula
from rvinefusion.fusion import (DecisionPMF, IndependenceEvaluators, LocalRates, chair_varshney,
                                eval_statistic, pattern_key, pmf_from_copulas, weights_from_pmf)
from rvinefusion.rvine import FittedRVine, build_subset_copula_set, nested_margins

L = 3
rates = LocalRates(p=np.array([0.45, 0.40, 0.35]), q=np.array([0.10, 0.10, 0.10]))

# Under H1 the sensors see a common event: a Gumbel D-vine 1-2-3.
g = BivariateCopula("gumbel", (2.5,))
vine = FittedRVine(np.array([[3, 0, 0], [1, 2, 0], [2, 1, 1]]),
                   [[], [BivariateCopula()], [g, g]])
print("vine margins available without refitting:", sorted(nested_margins(vine)))

# Fitting on a sample reads those margins off the array and fits a small
# vine for whatever is left over.
subsets = build_subset_copula_set(vine.sample(4000, seed=2), families=("indep", "gumbel"))
print("subset evaluators:", {"".join(map(str, k)): v for k, v in subsets.provenance().items()})

P = pmf_from_copulas(subsets, rates.p, mc_budget=50_000, seed=0)
Q = pmf_from_copulas(IndependenceEvaluators(L), rates.q)
pmf = DecisionPMF(P, Q)
print("\npattern   P(H1)    P(H0)")
for s in range(1 << L):
    print(f"  {pattern_key(s, L)}   {pmf.P[s]:.4f}   {pmf.Q[s]:.4f}")

# The log likelihood ratio of one pattern expands over subsets of firing
# sensors; A_E is the weight of subset E.
w = weights_from_pmf(pmf)
for mask in range(1, 1 << L):
    members = [i + 1 for i in range(L) if mask >> (L - 1 - i) & 1]
    print(f"  A_{''.join(map(str, members)):4s} = {w.A[mask]: .4f}")

# The Chair-Varshney rule keeps only the single-sensor terms.  The two
# statistics carry different constant offsets, so compare rankings, not values.
bits = np.array([[1, 1, 0], [0, 0, 0], [1, 1, 1], [0, 1, 0]])
print("\nstatistic over four instants  dependent:", round(eval_statistic(w, bits), 3),
      " chair-varshney:", round(float(chair_varshney(rates, bits)), 3))
