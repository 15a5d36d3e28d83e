# coding: utf-8

# # Scaling to hundreds of candidates with an anchor set
#
# Rank a random subset first, then binary-search every other item into it.
# The second stage needs about log2(anchor + 1) queries per item, so the
# total grows linearly in N once the anchor is fixed.

# In[1]:

from pairsearch import (
    AnchorConfig,
    RankerConfig,
    ScorePrior,
    SyntheticComparator,
    SyntheticOracleConfig,
    anchor_size,
    pairs_scaled,
    pairs_sort,
    quantile_match,
    spearman,
    synthetic_group,
)

# How big should the anchor be? A proportion-estimate sample size with a
# design effect gives a little over a hundred.
anchor_size(z=1.28, p=0.4, e=0.07, deff=1.5)


# In[2]:

items = synthetic_group(500, seed=0)
judge = SyntheticComparator(SyntheticOracleConfig(noise_std=1.0))

full = pairs_sort(items, RankerConfig("greedy"), judge)
scaled = pairs_scaled(items, AnchorConfig(anchor_size=100), RankerConfig("greedy"), judge)
for name, res in (("merge sort", full), ("anchor + insert", scaled)):
    print(f"{name:>15}: {res.query_count} queries, "
          f"spearman {spearman(res.ranking.scores(), items.latents()):.3f}")


# Rankings can be turned back into Likert-style scores by matching a target
# score distribution: the bottom 10% get a 1, the next 20% a 2, and so on.

# In[3]:

scores = quantile_match(scaled.ranking, ScorePrior([0.1, 0.2, 0.4, 0.2, 0.1]))
{s: int((scores == s).sum()) for s in range(1, 6)}
