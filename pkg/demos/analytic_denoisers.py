"""Exact noise predictors for tractable data, and a small trained one.

A Gaussian-mixture data distribution admits a closed-form posterior noise
prediction at every noise level, which makes it the ground truth everything
else in this package is judged against. A point mass is the even simpler
edge case. The last section fits a tiny MLP by denoising score matching and
checks it against the exact answer.
"""

import numpy as np

from steplab.denoisers import (DsmConfig, GMDenoiser, PointDenoiser,
                               train_mlp_dsm)
from steplab.schedule import ve_edm

sched = ve_edm()
gm = GMDenoiser.create(sched,
                       weights=np.array([0.5, 0.3, 0.2]),
                       means=np.array([[2.0, 1.0], [-1.4, 1.8], [0.3, -2.2]]),
                       variances=np.array([0.25, 0.16, 0.36]))

print("mixture noise prediction epsilon(x, t):")
for t in (0.01, 1.0, 20.0):
    x = np.array([1.0, 0.5])
    print(f"  t = {t:6.2f}: eps = {gm.epsilon(x, t)}")

# at the mean of an isolated component the posterior noise is ~zero
x_near = np.array([2.0, 1.0]) * gm.sched.alpha(0.01)
print(f"at a component mean, t = 0.01: |eps| = "
      f"{np.linalg.norm(gm.epsilon(x_near, 0.01)):.2e}")

pt = PointDenoiser.create(sched, np.array([2.0, 1.0]))
x = np.array([3.0, -1.0])
print(f"point mass: eps = {pt.epsilon(x, 1.0)}  "
      f"(exactly (x - alpha x0)/sigma)")

print()
print("training a 2-layer MLP by denoising score matching on the point mass")
mlp, losses = train_mlp_dsm(pt, sched, DsmConfig(steps=500, seed=0))
print(f"dsm loss: start {losses[0]:.4f} -> end {losses[-1]:.4f}")
g = np.random.default_rng(1)
errs = []
for _ in range(200):
    t = g.uniform(sched.t_min, sched.T)
    x = sched.alpha(t) * pt.x0 + sched.sigma(t) * g.standard_normal(2)
    e_true = pt.epsilon(x, t)
    errs.append(np.linalg.norm(mlp.epsilon(x, t) - e_true)
                / max(np.linalg.norm(e_true), 1e-9))
print(f"median rel err vs the exact predictor: {np.median(errs):.3f}")
