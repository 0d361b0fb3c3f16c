"""Evaluate each loss on a toy batch and audit its gradients.

Run with ``python3 demos/loss_gradients.py``.
"""

import numpy as np

from hysurv import diffengine as de
from hysurv import geometry as geo
from hysurv.audit import gradient_audit
from hysurv.losses import LossConfig, censor_constraint, nll_survival, ranking_loss

rng = np.random.default_rng(0)
cfg = LossConfig()

logits = rng.normal(size=(6, 4))
labels = np.array([1, 2, 3, 4, 2, 3])  # interval indices are 1-based
censors = np.array([0, 0, 1, 0, 1, 0])
print("survival NLL", float(nll_survival(logits, labels, censors)))

times = np.array([3.0, 8.0, 12.0, 20.0, 31.0, 44.0])
emb = geo.exp_map0(0.3 * rng.normal(size=(6, 5)), cfg.c)
print("ranking loss", float(ranking_loss(emb, times, cfg)))
print("censor constraint", float(censor_constraint(emb, censors, cfg.c, cfg.c_low, cfg.c_high)))

# gradient of the ranking loss with respect to the tangent vectors
point = {"v": 0.3 * rng.normal(size=(6, 5))}
report = de.finite_diff_check(lambda p: ranking_loss(geo.exp_map0(p["v"], cfg.c), times, cfg), point)
print("ranking loss gradient check, max relative error", report.max_rel_error)

for name, err in gradient_audit(seed=0).items():
    print(f"{name:28s} {err:.2e}")
