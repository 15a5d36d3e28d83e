# coding: utf-8

# # Ranking with a noisy pairwise judge
#
# We simulate a judge that compares two candidates and returns the
# probability that the first is better. Strengths are hidden latent scores;
# the judge sees them through Bradley-Terry noise. Merge sort turns those
# comparisons into a full ranking using far fewer than all N(N-1)/2 pairs.

# In[1]:

import numpy as np

from pairsearch import (
    RankerConfig,
    SyntheticComparator,
    SyntheticOracleConfig,
    pairs_sort,
    spearman,
    synthetic_group,
)

items = synthetic_group(16, seed=0)
np.round(items.latents(), 2)


# A noiseless judge recovers the exact order. The query count stays under
# N log2 N = 64.

# In[2]:

exact = pairs_sort(items, RankerConfig("greedy"), SyntheticComparator())
print("queries:", exact.query_count)
print("spearman:", spearman(exact.ranking.scores(), items.latents()))


# Adding noise to every pair makes the judge inconsistent. The greedy merge
# commits to each decision, so different shuffles give different rankings.

# In[3]:

noisy = SyntheticComparator(SyntheticOracleConfig(noise_std=1.0, seed=3))
for seed in range(5):
    res = pairs_sort(items, RankerConfig("greedy", seed=seed), noisy)
    print(seed, res.query_count, round(spearman(res.ranking.scores(), items.latents()), 3))


# The beam variant keeps several interleavings alive whenever a comparison is
# uncertain (entropy above the threshold), at the cost of extra queries.

# In[4]:

for bs in (1, 10, 100):
    res = pairs_sort(items, RankerConfig("beam", bs, 0.6, seed=0), noisy)
    print(f"beam {bs:>3}: queries {res.query_count:>3}, "
          f"spearman {spearman(res.ranking.scores(), items.latents()):.3f}")
