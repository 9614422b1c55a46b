"""Evaluation utilities: distances, Jacobian log-determinants, the
perturbation bound, radius sweeps, cross-solver grids, and benchmarking.

The bound being estimated compares teacher and student as transport maps:
for x'_T in a ball of radius r sigma_T around x_T ~ N(0, sigma_T^2 I), the
KL gap decomposes into r^2/2 + r sqrt(d+1) plus the expected absolute gap
between log |det J| of the two maps, estimated by Monte Carlo with the
teacher Jacobian at ball centers and the student Jacobian at uniformly
drawn ball points.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import engine as en
from . import rng as rngmod
from .discretize import Discretization, heuristic_times
from .solvers import SolverSpec, initial_state, make_steps, solve
from .training import (Dataset, distance, mean_hard_loss, split_indices,
                       train)


class JacobianError(RuntimeError):
    pass


def rmsd(a, b):
    """Root-mean-square deviation over all coordinates of paired samples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("rmsd needs equal-shape sample arrays")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def w1_1d(a, b):
    """1-D Wasserstein-1 between equal-size empirical distributions."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError("w1_1d needs equal-size samples")
    return float(np.mean(np.abs(a - b)))


def w1(a, b):
    """Per-coordinate W1 averaged over dimensions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError("w1 needs equal-shape (n, d) arrays")
    return float(np.mean([w1_1d(a[:, j], b[:, j]) for j in range(a.shape[1])]))


# ----------------------------------------------------------- transport maps


def solver_map(den, sched, spec, times, times_c=None):
    """Closure x_T -> x_0 suitable for Jacobian extraction (taped or raw)."""
    times = np.asarray(times, dtype=np.float64)
    if times_c is None:
        times_c = times
    times_c = np.asarray(times_c, dtype=np.float64)
    steps = make_steps(den, sched, spec, spec.nfe)
    shared = (times, times_c)

    def map_fn(x):
        state = initial_state(spec, x)
        for step in steps:
            state = step(state, shared)
        return state[0]

    return map_fn


def solve_batch(den, sched, spec, times, times_c, xs):
    return np.stack([solve(den, sched, spec, times, times_c, x) for x in xs])


def log_abs_det_jacobian(map_fn, x):
    """log |det dmap/dx| via one reverse pass per output coordinate.

    Small-dimension tool (d <= 4): the Jacobian is materialized row by row
    and factored by LU with partial pivoting.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    if d > 4:
        raise JacobianError("log-det Jacobian supports d <= 4")
    tape = en.Tape()
    xv = tape.leaf(x)
    y = map_fn(xv)
    rows = [tape.gradient(en.index(y, j), [xv])[0] for j in range(d)]
    jac = np.stack(rows)
    sign, logdet = np.linalg.slogdet(jac)
    if sign == 0.0 or not np.isfinite(logdet):
        raise JacobianError("singular Jacobian")
    return float(logdet)


@dataclass(frozen=True)
class BoundReport:
    r: float
    d: int
    term1: float
    term2: float
    term3: float
    n_samples: int

    @property
    def total(self):
        return self.term1 + self.term2 + self.term3


def bound_closed_terms(r, d):
    """The two analytic bound terms: (r^2 / 2, r sqrt(d + 1))."""
    return 0.5 * r * r, r * np.sqrt(d + 1.0)


def estimate_bound(teacher_map, student_map, sched, r, d, n_samples, seed):
    """Monte-Carlo estimate of the three-term perturbation bound.

    term1 = r^2 / 2 and term2 = r sqrt(d + 1) are exact; term3 averages
    |log det J_teacher(b) - log det J_student(a)| over ball centers
    b ~ N(0, sigma_T^2 I) and uniform ball points a in B(b, r sigma_T).
    """
    sig = sched.sigma_T
    term1, term2 = bound_closed_terms(r, d)
    gaps = np.empty(n_samples, dtype=np.float64)
    for i in range(n_samples):
        g = rngmod.substream(seed, "bound", i)
        b = sig * g.standard_normal(d)
        direction = g.standard_normal(d)
        direction /= np.linalg.norm(direction)
        rad = r * sig * g.random() ** (1.0 / d)
        a = b + rad * direction
        gaps[i] = abs(log_abs_det_jacobian(teacher_map, b)
                      - log_abs_det_jacobian(student_map, a))
    return BoundReport(r=float(r), d=int(d), term1=float(term1),
                       term2=float(term2), term3=float(np.mean(gaps)),
                       n_samples=int(n_samples))


# -------------------------------------------------------------- experiments


def sweep_r(ds, den, sched, spec, cfg, r_values):
    """Train once per feasibility radius r (shared seed/init); returns
    [(r, best validation soft loss)]."""
    rows = []
    for r in r_values:
        ds_r = Dataset(x_T=ds.x_T.copy(), x_prime=ds.x_T.copy(),
                       y=ds.y.copy(), seed=ds.seed,
                       schedule_hash=ds.schedule_hash)
        report = train(ds_r, den, sched, spec, replace(cfg, r_override=float(r)))
        rows.append((float(r), report.best_val))
    return rows


def cross_eval(ds, den, sched, specs, cfg):
    """Train one grid per solver spec, evaluate every grid under every solver.

    Entry [i][j] is the mean validation teacher-distance of the grid trained
    with specs[i] when sampled with specs[j]; the learned query offsets xi_c
    are solver-specific, so they apply only on the diagonal.
    """
    nfes = {s.nfe for s in specs}
    if len(nfes) != 1:
        raise ValueError("cross_eval requires a shared NFE")
    _, val_idx = split_indices(ds.count, ds.seed)
    trained = []
    for spec in specs:
        ds_i = Dataset(x_T=ds.x_T.copy(), x_prime=ds.x_T.copy(),
                       y=ds.y.copy(), seed=ds.seed,
                       schedule_hash=ds.schedule_hash)
        report = train(ds_i, den, sched, spec, cfg)
        trained.append(report)
    n = len(specs)
    matrix = np.zeros((n, n), dtype=np.float64)
    for i, rep in enumerate(trained):
        for j, spec_j in enumerate(specs):
            xi_c = rep.best_xi_c if i == j else None
            disc = Discretization.create(sched, spec_j.nfe, xi=rep.best_xi,
                                         xi_c=xi_c)
            matrix[i, j] = mean_hard_loss(disc, den, sched, spec_j, ds,
                                          val_idx)
    return matrix


BENCH_METHODS = ("uniform", "quadratic", "edm", "logsnr", "learned")


def bench_eval_assets(den, sched, teacher, eval_count, rmsd_ref_nfe, seed):
    """Shared evaluation data for a bench sweep: noise, teacher targets,
    fine-DDIM reference outputs, and exact data samples (when available)."""
    x_eval = rngmod.sample_prior(sched, den.d, eval_count,
                                 rngmod.derive_seed(seed, "bench_eval"))
    y_eval = teacher.solve_many(x_eval)
    ref_spec = SolverSpec(family="dpmpp", order=1, nfe=rmsd_ref_nfe)
    ref_times = heuristic_times("logsnr", sched, rmsd_ref_nfe)
    ref_out = solve_batch(den, sched, ref_spec, ref_times, None, x_eval)
    gt = den.sample_data(eval_count, rngmod.derive_seed(seed, "bench_gt")) \
        if hasattr(den, "sample_data") else None
    return x_eval, y_eval, ref_out, gt


def bench_cell(ds, den, sched, spec, cfg, method, nfe, assets, seed):
    """One (method, NFE) benchmark cell on the shared eval assets."""
    x_eval, y_eval, ref_out, gt = assets
    spec_n = SolverSpec(family=spec.family, order=spec.order, nfe=int(nfe))
    if method == "learned":
        ds_c = Dataset(x_T=ds.x_T.copy(), x_prime=ds.x_T.copy(),
                       y=ds.y.copy(), seed=ds.seed,
                       schedule_hash=ds.schedule_hash)
        report = train(ds_c, den, sched, spec_n, replace(cfg, seed=seed))
        disc = report.best_discretization(sched, spec_n.nfe)
        times, times_c = disc.times(), disc.times_c()
    else:
        times = heuristic_times(method, sched, spec_n.nfe)
        times_c = times
    out = solve_batch(den, sched, spec_n, times, times_c, x_eval)
    tdist = float(np.mean([distance(out[i], y_eval[i])
                           for i in range(x_eval.shape[0])]))
    row_w1 = w1(out, gt) if gt is not None else float("nan")
    return (method, f"{spec.family}{spec.order}", int(nfe), tdist,
            rmsd(out, ref_out), row_w1, int(seed))


def bench_rows(ds, den, sched, spec, cfg, teacher, nfes,
               methods=BENCH_METHODS, eval_count=64, rmsd_ref_nfe=100,
               seed=0):
    """Serial benchmark sweep over every (NFE, method) cell.

    Returns rows (method, solver, nfe, teacher_dist, rmsd, w1, seed).  The
    RMSD reference is a fine DDIM run (dpmpp order 1) on the same noise; W1
    compares against exact data samples when the denoiser can provide them.
    """
    assets = bench_eval_assets(den, sched, teacher, eval_count, rmsd_ref_nfe,
                               seed)
    return [bench_cell(ds, den, sched, spec, cfg, method, nfe, assets, seed)
            for nfe in nfes for method in methods]
