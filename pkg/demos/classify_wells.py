"""Leave-one-group-out LDA/QDA on features built from change-point fits.

Two synthetic "conditions" differ in memory and change time. Each group plays
the role of one experiment. Run with ``python3 demos/classify_wells.py``
(about ten seconds).
"""

import json

import numpy as np

from trendeq import ScenarioSpec, fit_sigmoid, gen_scenario
from trendeq.classify import accuracy_report, original_features, t2cd_features

CONDITIONS = {"slow": dict(d=1.2, tau=30.0), "fast": dict(d=0.3, tau=18.0)}
rng = np.random.default_rng(3)
data = []
for g in range(4):
    for label, c in CONDITIONS.items():
        for k in range(6):
            tau = c["tau"] + rng.normal(scale=2.0)
            spec = ScenarioSpec(tau_hours=(tau,), d=c["d"], seed=int(rng.integers(2**31)))
            ts = gen_scenario(spec).data[0]
            base = original_features(ts, 17.0, group=f"exp{g}", label=label)
            data.append(t2cd_features(fit_sigmoid(ts), base.select(["max_level"])))

report = accuracy_report(data, rhos=(1.0, 0.0), feature_sets={
    "max_level": ["max_level"],
    "max_level+tau+d": ["max_level", "tau_hat_hours", "d_hat"]})
for row in report["rows"]:
    print(f"{row['features']:>16} {row['classifier']}: mean {row['mean']:.3f} sd {row['sd']:.3f}")
print(json.dumps(report["rows"][0]["folds"], indent=None))
