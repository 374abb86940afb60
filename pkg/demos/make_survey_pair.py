"""Write a synthetic pair of survey files for the CLI walkthrough.

Both files share age, weekly hours and region. Only the recipient records
economic status; only the donor records a monthly income band. A fifth of
the donor units are also in the recipient file.

usage: python3 demos/make_survey_pair.py OUTDIR
"""
import csv
import sys
from pathlib import Path

import numpy as np

out = Path(sys.argv[1] if len(sys.argv) > 1 else "walkthrough")
out.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(12)
N = 20_000
age = rng.integers(16, 85, N)
hours = np.clip(rng.normal(32, 12, N) - 0.4 * np.maximum(age - 60, 0), 0, 70)
region = rng.choice(["east", "north", "south", "west"], N, p=[0.2, 0.3, 0.3, 0.2])
status = np.where(age >= 65, "retired", np.where(hours >= 20, "employed", "other"))
income = 700 + 45 * hours + 12 * np.minimum(age, 60) + 150 * (region == "south") + rng.normal(0, 350, N)
band = np.array(["low", "middle", "high"])[np.digitize(income, [1800, 2800])]

# unequal inclusion probabilities: older people are oversampled in S1
p1 = np.where(age >= 65, 2.0, 1.0)
s1 = rng.choice(N, 800, replace=False, p=p1 / p1.sum())
s2 = np.concatenate([rng.choice(s1, 160, replace=False),
                     rng.choice(np.setdiff1d(np.arange(N), s1), 2240, replace=False)])
w1 = 1.0 / (800 * p1[s1] / p1.sum())
w2 = np.full(len(s2), N / len(s2))

for name, idx, col, vals, w in (("recipient.csv", s1, "status", status, w1),
                                ("donor.csv", s2, "income_band", band, w2)):
    with open(out / name, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["person", "age", "hours", "region", col, "weight"])
        for i, wi in zip(idx, w):
            wr.writerow([f"p{i:05d}", int(age[i]), round(float(hours[i]), 1), region[i], vals[i], float(wi)])

# the table the matching tries to recover (not observable in practice)
with open(out / "population_table.csv", "w", newline="") as fh:
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(["status", "income_band", "count"])
    for s in sorted(set(status)):
        for b in sorted(set(band)):
            wr.writerow([s, b, int(np.sum((status == s) & (band == b)))])
print(f"wrote {out}/recipient.csv ({len(s1)} rows), {out}/donor.csv ({len(s2)} rows)")
