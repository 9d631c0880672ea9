"""Small constructors shared by the tests."""

import numpy as np

from sepcount.network import ActorRegistry, EventPanel


def make_panel(mats, actors=None, presence=None, values=None):
    """Panel from a list of dense count matrices; everyone present unless ``presence`` says otherwise."""
    mats = [np.asarray(m, dtype=np.int64) for m in mats]
    T, n = len(mats), mats[0].shape[0]
    actors = actors or [chr(ord("A") + k) if n <= 26 else f"a{k}" for k in range(n)]
    if presence is None:
        presence = {a: range(1, T + 1) for a in actors}
    reg = ActorRegistry(tuple(actors), {a: frozenset(p) for a, p in presence.items()})
    return EventPanel(mats, reg, values)


def random_panel(rng, n, T, p_absent=0.25, rate=0.6):
    """Random panel with random contiguous presence spans and Poisson counts."""
    actors = [f"x{k}" for k in range(n)]
    presence = {}
    for a in actors:
        if rng.random() < p_absent:
            lo = int(rng.integers(1, T + 1))
            hi = int(rng.integers(lo, T + 1))
            presence[a] = range(lo, hi + 1)
        else:
            presence[a] = range(1, T + 1)
    mats = []
    for t in range(1, T + 1):
        mask = np.array([t in presence[a] for a in actors])
        y = rng.poisson(rate, (n, n)) * (rng.random((n, n)) < 0.5)
        y = y * np.outer(mask, mask)
        np.fill_diagonal(y, 0)
        mats.append(y)
    return make_panel(mats, actors, presence)


# filled by the acceptance tests and printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
