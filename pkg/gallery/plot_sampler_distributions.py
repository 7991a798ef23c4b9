"""
What each negative sampler draws
================================

For one user, compare the closed-form candidate distribution of every
sampler with empirical draw frequencies.
"""

import numpy as np

from fairneg.backbone import init_xavier
from fairneg.dataset import GroupMap, InteractionTable
from fairneg.samplers import (FAIRNEG, FAIRSTATIC, NNCF, UNS, NegativeSampler, SamplerConfig, fair_prob,
                              fairstatic_distribution, importance_prob, mixup_prob)

###########################################################################
# A random 50 x 40 interaction matrix; the last 12 items form the minority group.

rng = np.random.default_rng(0)
mask = rng.random((50, 40)) < 0.25
table = InteractionTable(*np.nonzero(mask), 50, 40)
groups = GroupMap((np.arange(40) >= 28).astype(np.int64), ("major", "minor"))
model = init_xavier(50, 40, 8, seed=1)
p = fairstatic_distribution(table, groups)
print("group shares of training positives:", np.round(p.p, 3))

###########################################################################
# The fair and importance components and their mixture for user 0.

u = 0
cand = table.negatives(u)
fair = fair_prob(u, groups, table, p)
imp = importance_prob(u, model, table, tau=0.4)
for beta in (0.0, 0.5, 1.0):
    mix = mixup_prob(fair, imp, beta)
    minor = mix[groups.item_group[cand] == 1].sum()
    print(f"beta={beta:.1f}: mass on minority negatives = {minor:.3f}")

###########################################################################
# Empirical frequencies from 10^5 draws against the closed form.

for strategy in (UNS, NNCF, FAIRSTATIC, FAIRNEG):
    sampler = NegativeSampler(SamplerConfig(strategy, beta=0.5, tau=0.4), table, groups)
    draws = sampler.sample(np.full(100_000, u), np.random.default_rng(2), dist=p,
                           score_fn=model.score_users)
    freq = np.array([(draws == j).mean() for j in cand])
    minor = freq[groups.item_group[cand] == 1].sum()
    print(f"{strategy:10s} empirical minority mass = {minor:.3f}")
