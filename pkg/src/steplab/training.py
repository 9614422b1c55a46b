"""Grid learning by soft teacher forcing.

A teacher solver with a fine grid maps prior noise x_T to targets
y = Psi*(x_T).  The student reuses the same denoiser with only N steps and
learnable (xi, xi_c).  Rather than forcing Psi_xi(x_T) = y (hard loss), each
training pair carries a perturbed start x'_T that is co-optimized under the
constraint ||x'_T - x_T|| <= rho_ball, with

    rho_ball = r * sigma_T,      r = gamma * d / NFE^2.

Each iteration takes one projected-SGD step on x'_T and simultaneous steps on
xi (RMSprop with momentum) and xi_c (plain SGD, phase 2 only); gradients come
from the checkpointed chain so memory per denoiser call stays flat in NFE.
End of epoch, validation x'_T are refreshed with K frozen-grid projected-SGD
steps (keeping each pair's best iterate), the validation soft loss is
recorded, plateau decay is applied to both learning rates, and (xi, xi_c) is
checkpointed whenever the validation loss reaches a new minimum.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import engine as en
from . import rng as rngmod
from .discretize import (Discretization, HEURISTICS, heuristic_times,
                         init_from_times, tau, query_times)
from .solvers import SolverSpec, make_steps, solve


class TrainingError(RuntimeError):
    pass


# ------------------------------------------------------------ ball geometry


def radius(gamma, d, nfe):
    """Perturbation level r = gamma * d / NFE^2 (unitless, scales sigma_T)."""
    if gamma < 0 or d < 1 or nfe < 1:
        raise TrainingError("radius needs gamma >= 0, d >= 1, nfe >= 1")
    return gamma * d / float(nfe * nfe)


def ball_radius(gamma, d, nfe, sched):
    """Feasible-ball radius rho_ball = r * sigma_T."""
    return radius(gamma, d, nfe) * sched.sigma_T


def project(x_prime, x_T, rho_ball):
    """Project onto the closed ball B(x_T, rho_ball); inside points pass."""
    diff = x_prime - x_T
    dist = float(np.sqrt(np.dot(diff, diff)))
    if dist <= rho_ball:
        return np.asarray(x_prime, dtype=np.float64)
    return x_T + (rho_ball / dist) * diff


def distance(a, b):
    """Dimension-normalized squared error (1/d) ||a - b||^2; engine-generic."""
    diff = en.sub(a, b)
    d = np.shape(en.data_of(diff))[0]
    return en.mul(en.dot(diff, diff), 1.0 / d)


# ------------------------------------------------------------------ teacher


@dataclass(frozen=True)
class Teacher:
    """Frozen fine-grid solver producing targets Psi*(x_T)."""

    den: object
    sched: object
    spec: SolverSpec
    times: np.ndarray

    @classmethod
    def create(cls, den, sched, family="dpmpp", order=2, nfe=100,
               grid="logsnr"):
        spec = SolverSpec(family=family, order=order, nfe=nfe)
        times = heuristic_times(grid, sched, nfe)
        return cls(den=den, sched=sched, spec=spec, times=times)

    def solve_one(self, x_T):
        return solve(self.den, self.sched, self.spec, self.times, None, x_T)

    def solve_many(self, xs):
        return np.stack([self.solve_one(x) for x in xs])


@dataclass
class Dataset:
    """Training triples (x_T, x'_T, y) plus provenance for format checks."""

    x_T: np.ndarray
    x_prime: np.ndarray
    y: np.ndarray
    seed: int
    schedule_hash: int

    @property
    def count(self):
        return self.x_T.shape[0]

    @property
    def d(self):
        return self.x_T.shape[1]


def generate_dataset(den, sched, teacher, count, seed):
    if count < 2:
        raise TrainingError("dataset needs count >= 2")
    x_T = rngmod.sample_prior(sched, den.d, count, seed)
    y = teacher.solve_many(x_T)
    return Dataset(x_T=x_T, x_prime=x_T.copy(), y=y, seed=int(seed),
                   schedule_hash=sched.schedule_hash())


def split_indices(count, seed):
    """50/50 split by index parity of a seeded shuffle (even -> train)."""
    perm = rngmod.substream(seed, "split").permutation(count)
    return np.sort(perm[0::2]), np.sort(perm[1::2])


# ------------------------------------------------------------------- losses


def _chain_parts(den, sched, spec, y, d, fixed_xi=None, fixed_xi_c=None):
    """Prelude/steps/finale closures for one training pair.

    When fixed_xi/fixed_xi_c are given, the grid is treated as a constant and
    only x_prime is differentiated (used by the validation refresh).
    """
    T, t_min = sched.T, sched.t_min
    steps = make_steps(den, sched, spec, spec.nfe)
    pads = tuple(np.zeros(d, dtype=np.float64)
                 for _ in range(spec.history_width))

    def prelude(env):
        xi = env["xi"] if fixed_xi is None else fixed_xi
        xi_c = env["xi_c"] if fixed_xi_c is None else fixed_xi_c
        times = tau(xi, T, t_min)
        times_c = en.clamp(en.add(times, xi_c), t_min, T)
        return (times, times_c), (env["x_prime"],) + pads

    def finale(state, shared):
        return distance(state[0], y)

    return prelude, steps, finale


def pair_grads(disc, den, sched, spec, x_prime, y, checkpointed=True,
               grid_only_constant=False):
    """Soft-loss value and gradients for one pair.

    Returns a ChainGradResult with grads for xi, xi_c, x_prime (the grid
    entries are omitted when grid_only_constant is set).
    """
    d = x_prime.shape[0]
    if grid_only_constant:
        parts = _chain_parts(den, sched, spec, y, d, fixed_xi=disc.xi,
                             fixed_xi_c=disc.xi_c)
        leaves = {"x_prime": x_prime}
    else:
        parts = _chain_parts(den, sched, spec, y, d)
        leaves = {"xi": disc.xi, "xi_c": disc.xi_c, "x_prime": x_prime}
    fn = en.checkpointed_chain_grad if checkpointed else en.whole_chain_grad
    return fn(leaves, *parts)


def soft_loss(disc, den, sched, spec, x_prime, y):
    """d(Psi_xi(x'_T), y) for one pair, plain forward."""
    out = solve(den, sched, spec, disc.times(), disc.times_c(), x_prime)
    return float(distance(out, y))


def hard_loss(disc, den, sched, spec, x_T, y):
    return soft_loss(disc, den, sched, spec, x_T, y)


def mean_soft_loss(disc, den, sched, spec, ds, idx):
    return float(np.mean([soft_loss(disc, den, sched, spec, ds.x_prime[j],
                                    ds.y[j]) for j in idx]))


def mean_hard_loss(disc, den, sched, spec, ds, idx):
    return float(np.mean([hard_loss(disc, den, sched, spec, ds.x_T[j],
                                    ds.y[j]) for j in idx]))


def select_init(den, sched, spec, ds, val_idx):
    """Pick the heuristic grid with the lowest validation teacher-distance."""
    best_kind, best_val = None, np.inf
    for kind in HEURISTICS:
        times = heuristic_times(kind, sched, spec.nfe)
        disc = Discretization.from_times(sched, times)
        val = mean_hard_loss(disc, den, sched, spec, ds, val_idx)
        if val < best_val:
            best_kind, best_val = kind, val
    xi = init_from_times(heuristic_times(best_kind, sched, spec.nfe),
                         sched.T, sched.t_min)
    return xi, best_kind, best_val


# --------------------------------------------------------------- optimizers


class RmsPropMomentum:
    """RMSprop with momentum: v <- a v + (1-a) g^2; m <- mu m + g/(sqrt v + eps)."""

    def __init__(self, shape, alpha=0.99, momentum=0.9, eps=1e-8):
        self.alpha = alpha
        self.momentum = momentum
        self.eps = eps
        self.sq_avg = np.zeros(shape, dtype=np.float64)
        self.buf = np.zeros(shape, dtype=np.float64)

    def step(self, param, grad, lr):
        self.sq_avg *= self.alpha
        self.sq_avg += (1.0 - self.alpha) * grad * grad
        self.buf *= self.momentum
        self.buf += grad / (np.sqrt(self.sq_avg) + self.eps)
        param -= lr * self.buf


def clip_to_norm(grad, max_norm):
    n = float(np.sqrt(np.dot(grad, grad)))
    if n > max_norm > 0.0:
        return grad * (max_norm / n)
    return grad


# ------------------------------------------------------------- training loop


@dataclass
class TrainConfig:
    gamma: float = 0.001
    r_override: float = -1.0  # >= 0 overrides gamma*d/NFE^2
    epochs_phase1: int = 2
    epochs_phase2: int = 5
    batch: int = 2
    lr_xi: float = 0.005
    lr_xic: float = -1.0      # < 0 derives 0.1 / NFE
    lr_xprime: float = -1.0   # < 0 derives 12.0 / NFE
    clip_norm: float = 1.0
    plateau_factor: float = 0.8
    plateau_patience: int = 5
    lr_floor_xi: float = 5e-5
    lr_floor_xic: float = 1e-6
    val_refresh_steps: int = 10
    init: str = "auto"        # auto | uniform | quadratic | edm | logsnr
    seed: int = 0


@dataclass
class TrainReport:
    init_kind: str
    init_val_loss: float
    iter_rows: list = field(default_factory=list)   # (iter, epoch, phase, loss, lr_xi, lr_xic)
    epoch_rows: list = field(default_factory=list)  # (epoch, phase, val, lr_xi, lr_xic, wall_s)
    best_val: float = np.inf
    best_epoch: int = -1
    best_xi: np.ndarray = None
    best_xi_c: np.ndarray = None
    max_ball_violation: float = 0.0
    aborted: bool = False

    @property
    def train_losses(self):
        return [row[3] for row in self.iter_rows]

    @property
    def val_losses(self):
        return [row[2] for row in self.epoch_rows]

    def best_discretization(self, sched, nfe):
        return Discretization.create(sched, nfe, xi=self.best_xi,
                                     xi_c=self.best_xi_c)


def _refresh_pair(disc, den, sched, spec, x_T, x_prime, y, rho, lr, k_steps):
    """K projected-SGD steps on x' with the grid frozen; keep the best iterate."""
    best_x = x_prime.copy()
    best_loss = np.inf
    x = x_prime.copy()
    for _ in range(k_steps):
        res = pair_grads(disc, den, sched, spec, x, y, grid_only_constant=True)
        if res.loss < best_loss:
            best_loss, best_x = res.loss, x.copy()
        x = project(x - lr * res.grads["x_prime"], x_T, rho)
    final = soft_loss(disc, den, sched, spec, x, y)
    if final < best_loss:
        best_loss, best_x = final, x
    return best_x, best_loss


def train(ds, den, sched, spec, cfg):
    """Run the two-phase grid optimization; returns a TrainReport.

    Phase 1 (epochs_phase1) updates xi and x'_T only; phase 2 additionally
    updates xi_c.  The dataset's x_prime columns are updated in place, so the
    perturbed starts persist across epochs.
    """
    d = ds.d
    nfe = spec.nfe
    lr_xi = cfg.lr_xi
    lr_xic = cfg.lr_xic if cfg.lr_xic >= 0 else 0.1 / nfe
    lr_xp = cfg.lr_xprime if cfg.lr_xprime >= 0 else 12.0 / nfe
    r = cfg.r_override if cfg.r_override >= 0 else radius(cfg.gamma, d, nfe)
    rho = r * sched.sigma_T
    train_idx, val_idx = split_indices(ds.count, ds.seed)

    if cfg.init == "auto":
        xi, init_kind, init_val = select_init(den, sched, spec, ds, val_idx)
    elif cfg.init in HEURISTICS:
        xi = init_from_times(heuristic_times(cfg.init, sched, nfe),
                             sched.T, sched.t_min)
        init_kind = cfg.init
        init_val = mean_hard_loss(Discretization.create(sched, nfe, xi=xi),
                                  den, sched, spec, ds, val_idx)
    else:
        raise TrainingError(f"unknown init {cfg.init!r}")
    xi = np.asarray(xi, dtype=np.float64).copy()
    xi_c = np.zeros(nfe + 1, dtype=np.float64)

    report = TrainReport(init_kind=init_kind, init_val_loss=init_val,
                         best_xi=xi.copy(), best_xi_c=xi_c.copy())
    rms = RmsPropMomentum(xi.shape)
    plateau_count = 0
    it = 0
    n_epochs = cfg.epochs_phase1 + cfg.epochs_phase2
    for epoch in range(n_epochs):
        t_start = time.perf_counter()
        phase = 1 if epoch < cfg.epochs_phase1 else 2
        disc = Discretization.create(sched, nfe, xi=xi, xi_c=xi_c)
        order = rngmod.substream(cfg.seed, "batches", epoch).permutation(
            len(train_idx))
        stop = False
        for lo in range(0, len(order), cfg.batch):
            batch = [train_idx[j] for j in order[lo:lo + cfg.batch]]
            b = len(batch)
            g_xi = np.zeros_like(xi)
            g_xic = np.zeros_like(xi_c)
            losses = []
            g_xp = {}
            for j in batch:
                res = pair_grads(disc, den, sched, spec, ds.x_prime[j],
                                 ds.y[j])
                losses.append(res.loss)
                g_xi += res.grads["xi"] / b
                g_xic += res.grads["xi_c"] / b
                g_xp[j] = res.grads["x_prime"] / b
            loss = float(np.mean(losses))
            if not np.isfinite(loss):
                report.aborted = True
                stop = True
                break
            if lr_xi > 0:
                rms.step(xi, clip_to_norm(g_xi, cfg.clip_norm), lr_xi)
            if phase == 2:
                xi_c -= lr_xic * clip_to_norm(g_xic, cfg.clip_norm)
            for j in batch:
                moved = ds.x_prime[j] - lr_xp * g_xp[j]
                ds.x_prime[j] = project(moved, ds.x_T[j], rho)
                over = float(np.linalg.norm(ds.x_prime[j] - ds.x_T[j])) - rho
                report.max_ball_violation = max(report.max_ball_violation,
                                                over)
            it += 1
            report.iter_rows.append((it, epoch, phase, loss, lr_xi, lr_xic))
            disc = Discretization.create(sched, nfe, xi=xi, xi_c=xi_c)
            if not np.all(np.diff(disc.times()) < 0.0):
                report.aborted = True
                stop = True
                break
        if stop:
            break

        # end of epoch: refresh validation x', record loss, decay, checkpoint
        val_losses = []
        for j in val_idx:
            best_x, best_loss = _refresh_pair(disc, den, sched, spec,
                                              ds.x_T[j], ds.x_prime[j],
                                              ds.y[j], rho, lr_xp,
                                              cfg.val_refresh_steps)
            ds.x_prime[j] = best_x
            over = float(np.linalg.norm(best_x - ds.x_T[j])) - rho
            report.max_ball_violation = max(report.max_ball_violation, over)
            val_losses.append(best_loss)
        val = float(np.mean(val_losses))
        if not np.isfinite(val):
            report.aborted = True
            break
        if val < report.best_val:
            report.best_val = val
            report.best_epoch = epoch
            report.best_xi = xi.copy()
            report.best_xi_c = xi_c.copy()
            plateau_count = 0
        else:
            plateau_count += 1
            if plateau_count >= cfg.plateau_patience:
                lr_xi = max(lr_xi * cfg.plateau_factor, cfg.lr_floor_xi)
                lr_xic = max(lr_xic * cfg.plateau_factor, cfg.lr_floor_xic)
                plateau_count = 0
        wall = time.perf_counter() - t_start
        report.epoch_rows.append((epoch, phase, val, lr_xi, lr_xic, wall))
    return report
