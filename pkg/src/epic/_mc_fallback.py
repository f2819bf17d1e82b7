"""Pure-Python/numpy collusion Monte Carlo (fallback for epic._mc).

Simulates proxy selection directly: a benign meter drawing lam proxies
without replacement from a pool with `malicious` bad nodes picks an
all-malicious set exactly when, drawing one proxy at a time, every draw
lands on one of the still-unpicked malicious nodes.  The k-th conditional
draw succeeds with probability (malicious-k)/(pool-k), so the event is the
AND over lam uniform comparisons — vectorized here over (trial, meter, draw)
in chunks.
"""

from __future__ import annotations

import numpy as np

KERNEL = "numpy"


def mc_trials(pool: int, malicious: int, benign: int, lam: int, trials: int,
              seed: int, chunk: int = 4096) -> int:
    """Number of trials in which at least one benign meter picked an
    all-malicious proxy set."""
    if lam < 1:
        raise ValueError("lam must be >= 1")
    if malicious < lam:
        return 0  # cannot draw lam malicious proxies
    rng = np.random.default_rng(seed)
    ratios = np.array(
        [(malicious - k) / (pool - k) for k in range(lam)], dtype=np.float64
    )
    hits = 0
    remaining = trials
    while remaining > 0:
        size = min(chunk, remaining)
        u = rng.random((size, benign, lam))
        compromised = (u < ratios).all(axis=2)
        hits += int(compromised.any(axis=1).sum())
        remaining -= size
    return hits
