"""Goodness of fit by simulation on the toy panel.

After fitting the full toy model we draw 200 replicate panels, each one
period ahead of the observed history, and ask whether the observed yearly
average in-count and weighted clustering sit inside the simulated ranges.
The pooled count frequencies are shown on a log1p scale, as in a
rootogram.

    python3 demos/gof_envelopes.py
"""

import math
from pathlib import Path

import sepcount
from sepcount.config import load_inputs, parse_config

cfg = parse_config(Path(sepcount.__file__).parent / "data" / "toy" / "config.yaml")
panel, covariates = load_inputs(cfg)
result = sepcount.fit(sepcount.build_design(panel, covariates, cfg.model), cfg.estimation)
report = sepcount.gof_report(result, panel, covariates, n_sims=200, seed=7)

print("year  in-count  simulated [min, max]   clustering  simulated [q25, q75]")
for cell in report.cells["average_in_count"]:
    obs = report.observed["average_in_count"][cell]
    lo, hi = report.envelope("average_in_count", cell)
    c_obs = report.observed["clustering"][cell]
    c_lo, c_hi = report.envelope("clustering", cell, 0.25, 0.75)
    mark = " " if lo <= obs <= hi else "*"
    print(f"{cell}  {obs:8.2f}{mark} [{lo:6.2f}, {hi:6.2f}]      {c_obs:6.3f}      [{c_lo:.3f}, {c_hi:.3f}]")

print("\ncount  log1p(observed)  log1p(simulated median)")
for row in report.summary_rows():
    stat, k, obs, _, _, med, *_ = row
    if stat == "rootogram" and k <= 8:
        print(f"{k:5d}  {math.log1p(obs):15.2f}  {math.log1p(med):23.2f}")
