"""Regenerate the bundled synthetic kicker CSV and its schema.

Run from the repository root: ``python3 scripts/make_kicker_data.py``.
"""
import csv
import json
from pathlib import Path

import numpy as np

from playereval.simulation import load_fixture

OUT = Path(__file__).resolve().parents[1] / "src" / "playereval" / "data"
NAMES = ["Abbott", "Birch", "Castillo", "Dunmore", "Ekwueme", "Fontaine"]
RESERVES = ["Gallo", "Hartigan"]


def main(n=2400, seed=20240601):
    dgp = load_fixture("kicker")
    rng = np.random.default_rng(seed)
    roof = rng.choice(["open", "dome", "retractable"], size=n, p=[0.6, 0.25, 0.15])
    distance = np.round(rng.uniform(18, 60, size=n))
    wind = np.round(rng.uniform(0, 20, size=n))
    wind[roof == "dome"] = 0.0
    X = np.column_stack([distance, wind])
    pi = dgp.true_pi(X)
    A = (np.cumsum(pi, axis=1) < rng.random(n)[:, None]).sum(axis=1)
    A = np.minimum(A, dgp.m - 1)
    mu = dgp.true_mu(X)[np.arange(n), A]
    Y = (rng.random(n) < mu).astype(int)
    labels = [NAMES[a] for a in A]
    rows = []
    for i in range(n):
        w = "NA" if roof[i] == "dome" else str(int(wind[i]))
        d = "" if rng.random() < 0.01 else str(int(distance[i]))
        rows.append([f"{i + 1}", labels[i], d, w, roof[i], str(Y[i])])
    # a few part-time kickers that fall below the eligibility threshold
    for j, name in enumerate(RESERVES):
        for k in range(5 + 3 * j):
            dist = int(rng.integers(20, 55))
            rows.append([str(len(rows) + 1), name, str(dist), "5", "open",
                         str(int(rng.random() < 0.8))])
    with open(OUT / "kicker_synthetic.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attempt_id", "kicker", "distance", "wind", "roof", "made"])
        w.writerows(rows)
    schema = {
        "outcome": "made",
        "player": "kicker",
        "covariates": [
            {"name": "distance", "type": "numeric", "missing": "complete_case"},
            {"name": "wind", "type": "numeric", "missing": {"constant_fill": 0}},
            {"name": "roof", "type": "categorical", "missing": "complete_case"},
        ],
        "eligibility": {"min_attempts": 100},
        "x_condition": [],
    }
    with open(OUT / "kicker_schema.json", "w") as fh:
        json.dump(schema, fh, indent=2)
        fh.write("\n")


if __name__ == "__main__":
    main()
