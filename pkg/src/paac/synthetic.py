"""Synthetic long-tail interaction data with planted topic structure."""

from __future__ import annotations

import numpy as np


def power_law_interactions(num_users: int = 2000, num_items: int = 1000,
                           target_interactions: int = 60000, zipf_exponent: float = 1.0,
                           num_topics: int = 20, topic_concentration: float = 0.1,
                           offset: float = 5.0, seed=0) -> np.ndarray:
    """Sample ``(user, item)`` pairs with Zipf-like item popularity.

    Each item has a popularity weight ``(rank + offset) ** -zipf_exponent`` and
    a topic; each user draws a sparse Dirichlet taste over topics.  A user picks
    items without replacement with probability proportional to
    ``popularity * taste[topic]``, so unpopular items still carry a preference
    signal that a debiased model can recover.
    """
    rng = np.random.default_rng(seed)
    rank = rng.permutation(num_items)
    popularity = (rank + offset) ** -zipf_exponent
    topic = rng.integers(0, num_topics, size=num_items)
    taste = rng.dirichlet(np.full(num_topics, topic_concentration), size=num_users)

    mean_len = target_interactions / num_users
    lengths = np.clip(np.round(rng.lognormal(np.log(mean_len) - 0.125, 0.5, size=num_users)),
                      10, num_items // 2).astype(np.int64)
    # top-k of Gumbel-perturbed log-probabilities samples without replacement
    logits = np.log(popularity)[None, :] + np.log(taste[:, topic] + 1e-3)
    keys = logits + rng.gumbel(size=logits.shape)
    order = np.argsort(-keys, axis=1)
    users = np.repeat(np.arange(num_users), lengths)
    items = np.concatenate([order[u, :n] for u, n in enumerate(lengths)])
    return np.stack([users, items], axis=1)
