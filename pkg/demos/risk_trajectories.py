"""Train a small recurrent model on a synthetic cohort and print how its
risk estimate evolves for a few holdout encounters, next to the generator's
true risk.

    python demos/risk_trajectories.py
"""

import numpy as np

from icudyn.catalog import load_demo_catalog
from icudyn.evaluation import eligible, roc_auc
from icudyn.model import TrainConfig, forward, model_input, predict_many, train
from icudyn.pipeline import prepare
from icudyn.synth import SynthConfig, cohort_events, cohort_labels, generate_cohort

catalog = load_demo_catalog()
cohort = generate_cohort(SynthConfig(n_patients=1500, seed=11), catalog)
truth = {e.encounter_id: e for e in cohort}
data = prepare(cohort_events(cohort), cohort_labels(cohort), catalog, seed=11)
print(f"{len(cohort)} encounters, {len(data.train)} train / {len(data.holdout)} holdout")

cfg = TrainConfig(learning_rate=0.2, momentum=0.9, epochs=15, batch_size=64, widths=(16, 16, 16), seed=11)
result = train(data.train, cfg)
print("loss by epoch:", " ".join(f"{v:.4f}" for v in result.history))
held = eligible(data.holdout, 12)
scores = predict_many(held, [720.0], 12.0, result.params)[:, 0]
print(f"holdout AUC after 12 h: {roc_auc(scores, [0 if m.survived else 1 for m in held]).auc:.3f} (n={len(held)})")

died = [m for m in data.holdout if not m.survived][:2]
lived = [m for m in data.holdout if m.survived][:2]
for m in died + lived:
    traj = forward(model_input(m, 12.0), result.params)
    e = truth[m.encounter_id]
    print(f"\n{m.encounter_id} ({'died' if not m.survived else 'survived'}, {m.times[-1] / 60:.1f} h of data)")
    print("   hour   model risk (12 h ahead)   true cumulative risk")
    for h in (1, 3, 6, 9, 12, 18, 24):
        k = int(np.searchsorted(traj.t, h * 60.0, side="right")) - 1
        if k < 0 or h * 60.0 > m.times[-1]:
            continue
        print(f"   {h:4d}   {traj.risk[k]:.4f}                    {e.risk_at(h * 60.0):.4f}")
