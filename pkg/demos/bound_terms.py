"""The three-term bound on distribution shift from soft teacher forcing.

Allowing the initial noise to move inside a ball of radius r * sigma_T
perturbs the sampled distribution. The KL gap decomposes into two closed
forms in (r, d) plus a Monte-Carlo term comparing log-Jacobians of the
teacher and student transport maps across the ball.
"""

from steplab.denoisers import GMDenoiser
from steplab.discretize import heuristic_times
from steplab.evaluate import bound_closed_terms, estimate_bound, solver_map
from steplab.schedule import ve_edm
from steplab.solvers import SolverSpec

import numpy as np

sched = ve_edm()
gm = GMDenoiser.create(sched,
                       weights=np.array([0.5, 0.3, 0.2]),
                       means=np.array([[2.0, 1.0], [-1.4, 1.8], [0.3, -2.2]]),
                       variances=np.array([0.25, 0.16, 0.36]))

teacher = solver_map(gm, sched, SolverSpec(family="dpmpp", order=2, nfe=30),
                     heuristic_times("logsnr", sched, 30))
student = solver_map(gm, sched, SolverSpec(family="dpmpp", order=2, nfe=4),
                     heuristic_times("logsnr", sched, 4))

t1, t2 = bound_closed_terms(0.192, 3072)
print(f"closed terms at the image-scale radius (r=0.192, d=3072): "
      f"{t1:.4f} + {t2:.4f}")
print()

print(f"{'r':>6} {'term1':>8} {'term2':>8} {'term3':>8} {'total':>8}")
for r in (5.0, 1.0, 0.2, 0.05):
    rep = estimate_bound(teacher, student, sched, r, d=2, n_samples=60,
                         seed=0)
    print(f"{r:6.2f} {rep.term1:8.4f} {rep.term2:8.4f} {rep.term3:8.4f} "
          f"{rep.total:8.4f}")

print()
print("the closed terms are driven entirely by r; term3 hovers near the")
print("plain log-Jacobian gap between the two maps and never vanishes")
