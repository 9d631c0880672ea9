"""Regenerate the bundled toy dataset in src/sepcount/data/toy.

The toy panel is synthetic: 24 actors over the years 2000-2019, a few of
which enter late or leave early. A node covariate ``gdp`` (with gaps that
the config fills by interpolation) and a dyad covariate ``alliance`` drive
onset; repetition is more likely after last year's deliveries. Each event
carries a positive ``value`` so that ``tiv_log`` weights can be used.

    python3 demos/make_toy_data.py
"""

import csv
from pathlib import Path

import numpy as np

from sepcount.synthetic import actor_ids, simulate_network

OUT = Path(__file__).resolve().parents[1] / "src" / "sepcount" / "data" / "toy"
N, T, YEAR0 = 24, 20, 2000


def main(seed: int = 2024) -> None:
    rng = np.random.default_rng(seed)
    actors = actor_ids(N)
    presence = {a: frozenset(range(1, T + 1)) for a in actors}
    presence[actors[21]] = frozenset(range(6, T + 1))
    presence[actors[22]] = frozenset(range(1, 14))
    presence[actors[23]] = frozenset(range(9, T + 1))

    base = rng.normal(0.0, 1.0, N)
    log_gdp = base[:, None] + 0.03 * np.arange(T)[None, :] + rng.normal(0, 0.05, (N, T))
    gdp = np.exp(log_gdp + 3.0)
    blocs = rng.integers(0, 3, N)
    alliance = (blocs[:, None] == blocs[None, :]).astype(float)
    np.fill_diagonal(alliance, 0.0)

    sender_u = rng.normal(0, 0.4, N)

    def log_intensity(t, prev, window):
        g = log_gdp[:, max(t - 2, 0)]
        onset = -4.0 + 0.6 * g[:, None] + 0.3 * g[None, :] + 1.2 * alliance + 0.1 * np.sin(t / 3)
        rep = -0.2 + 0.3 * g[:, None] + 0.4 * alliance
        return np.where(prev > 0, rep, onset) + sender_u[:, None]

    panel = simulate_network(N, T, log_intensity, rng, presence=presence)

    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "events.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", "sender", "receiver", "count", "value"])
        for t in range(1, T + 1):
            y = panel.dense(t)
            for i, j in zip(*np.nonzero(y)):
                value = round(float(rng.gamma(2.0, 15.0) * y[i, j]), 2)
                w.writerow([YEAR0 + t - 1, actors[i], actors[j], int(y[i, j]), value])

    with open(OUT / "presence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["actor", "first_period", "last_period"])
        for a in actors:
            p = sorted(presence[a])
            w.writerow([a, YEAR0 + p[0] - 1, YEAR0 + p[-1] - 1])

    with open(OUT / "node_covariates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "actor", "period", "value"])
        for k, a in enumerate(actors):
            for t in range(T):
                # about 10% of interior values missing
                missing = 0 < t < T - 1 and rng.random() < 0.1
                w.writerow(["gdp", a, YEAR0 + t, "" if missing else round(float(gdp[k, t]), 3)])

    with open(OUT / "dyad_covariates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "sender", "receiver", "period", "value"])
        for i, a in enumerate(actors):
            for j, b in enumerate(actors):
                if i != j:
                    for t in range(T):
                        w.writerow(["alliance", a, b, YEAR0 + t, int(alliance[i, j])])
    print(f"wrote toy data to {OUT} ({int(sum(panel.dense(t).sum() for t in range(1, T + 1)))} events)")


if __name__ == "__main__":
    main()
