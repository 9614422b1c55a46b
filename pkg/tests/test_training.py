"""Training: ball geometry anchors, split determinism, chain gradients against
finite differences, optimizer oracle, and the shape of a full training run."""

import numpy as np
import pytest
from dataclasses import replace

import steplab.engine as en
from steplab.denoisers import GMDenoiser
from steplab.discretize import Discretization, heuristic_times
from steplab.schedule import ve_edm
from steplab.solvers import SolverSpec
from steplab.training import (Dataset, RmsPropMomentum, Teacher, TrainConfig,
                              TrainingError, ball_radius, clip_to_norm,
                              distance, generate_dataset, hard_loss,
                              mean_hard_loss, pair_grads, project, radius,
                              select_init, soft_loss, split_indices, train)

VE = ve_edm()
GM = GMDenoiser.create(VE, np.array([0.5, 0.3, 0.2]),
                       np.array([[2.0, 1.0], [-1.4, 1.8], [0.3, -2.2]]),
                       np.array([0.25, 0.16, 0.36]))


def small_dataset(count=8, teacher_nfe=40, seed=0):
    teacher = Teacher.create(GM, VE, nfe=teacher_nfe)
    return generate_dataset(GM, VE, teacher, count, seed)


# -------------------------------------------------------------- ball geometry


def test_radius_anchor():
    assert radius(0.001, 3072, 4) == 0.192


def test_radius_validation():
    with pytest.raises(TrainingError):
        radius(-0.1, 10, 4)
    with pytest.raises(TrainingError):
        radius(0.001, 0, 4)
    with pytest.raises(TrainingError):
        radius(0.001, 10, 0)


def test_ball_radius_scales_by_sigma_T():
    assert ball_radius(0.001, 3072, 4, VE) == 0.192 * 80.0


def test_project_rescales_outside_point():
    got = project(np.array([0.3, 0.4]), np.zeros(2), 0.25)
    np.testing.assert_allclose(got, [0.15, 0.20], atol=1e-15)


def test_project_keeps_inside_point():
    x = np.array([0.1, -0.05])
    np.testing.assert_array_equal(project(x, np.zeros(2), 0.25), x)


def test_project_zero_radius_returns_center():
    c = np.array([2.0, -1.0])
    np.testing.assert_array_equal(project(c + 1.0, c, 0.0), c)


def test_distance_is_normalized_squared_error():
    a, b = np.array([1.0, 3.0]), np.array([0.0, 1.0])
    assert distance(a, b) == (1.0 + 4.0) / 2.0


# ------------------------------------------------------------------- dataset


def test_generate_dataset_shapes_and_copy():
    ds = small_dataset(count=4)
    assert ds.count == 4 and ds.d == 2
    np.testing.assert_array_equal(ds.x_prime, ds.x_T)
    ds.x_prime[0, 0] += 1.0
    assert ds.x_T[0, 0] != ds.x_prime[0, 0]  # no aliasing
    assert ds.schedule_hash == VE.schedule_hash()
    with pytest.raises(TrainingError):
        generate_dataset(GM, VE, Teacher.create(GM, VE, nfe=10), 1, 0)


def test_teacher_targets_are_solver_outputs():
    ds = small_dataset(count=3, teacher_nfe=30)
    teacher = Teacher.create(GM, VE, nfe=30)
    np.testing.assert_array_equal(ds.y[1], teacher.solve_one(ds.x_T[1]))


def test_split_indices_partition():
    tr, va = split_indices(11, seed=5)
    assert len(tr) == 6 and len(va) == 5
    assert set(tr) | set(va) == set(range(11))
    assert set(tr).isdisjoint(va)
    tr2, va2 = split_indices(11, seed=5)
    np.testing.assert_array_equal(tr, tr2)
    tr3, _ = split_indices(11, seed=6)
    assert not np.array_equal(tr, tr3)


# ------------------------------------------------------------------ gradients


def fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def rel_err(a, b):
    scale = max(np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / scale


def test_pair_grads_match_finite_differences():
    ds = small_dataset(count=4, teacher_nfe=40)
    spec = SolverSpec(family="dpmpp", order=2, nfe=3)
    base = Discretization.from_times(VE, heuristic_times("logsnr", VE, 3))
    # nonzero xi_c keeps times_c off the clamp boundary at T, where central
    # differences would average the two one-sided slopes
    disc = Discretization.create(VE, 3, xi=base.xi,
                                 xi_c=np.array([-0.5, 0.3, -0.2, 0.1]))
    xp = ds.x_prime[0] + 0.05
    y = ds.y[0]
    res = pair_grads(disc, GM, VE, spec, xp, y)

    def loss_of_xi(xi):
        d2 = Discretization.create(VE, 3, xi=xi, xi_c=disc.xi_c)
        return soft_loss(d2, GM, VE, spec, xp, y)

    def loss_of_xic(xic):
        d2 = Discretization.create(VE, 3, xi=disc.xi, xi_c=xic)
        return soft_loss(d2, GM, VE, spec, xp, y)

    def loss_of_xp(v):
        return soft_loss(disc, GM, VE, spec, v, y)

    assert rel_err(res.grads["xi"], fd_grad(loss_of_xi, disc.xi)) <= 1e-4
    assert rel_err(res.grads["xi_c"], fd_grad(loss_of_xic, disc.xi_c)) <= 1e-4
    assert rel_err(res.grads["x_prime"], fd_grad(loss_of_xp, xp)) <= 1e-4


def test_checkpointed_equals_whole_tape_on_real_chain():
    ds = small_dataset(count=4, teacher_nfe=40)
    spec = SolverSpec(family="ipndm", order=3, nfe=4)
    disc = Discretization.from_times(VE, heuristic_times("edm", VE, 4))
    xp, y = ds.x_prime[1], ds.y[1]
    ck = pair_grads(disc, GM, VE, spec, xp, y, checkpointed=True)
    whole = pair_grads(disc, GM, VE, spec, xp, y, checkpointed=False)
    assert ck.loss == whole.loss
    for k in ("xi", "xi_c", "x_prime"):
        np.testing.assert_allclose(ck.grads[k], whole.grads[k],
                                   rtol=1e-12, atol=1e-12)


def test_grid_constant_mode_freezes_grid():
    ds = small_dataset(count=4)
    spec = SolverSpec(family="dpmpp", order=1, nfe=3)
    disc = Discretization.from_times(VE, heuristic_times("logsnr", VE, 3))
    res = pair_grads(disc, GM, VE, spec, ds.x_prime[0], ds.y[0],
                     grid_only_constant=True)
    assert set(res.grads) == {"x_prime"}


def test_hard_loss_is_soft_loss_at_x_T():
    ds = small_dataset(count=4)
    spec = SolverSpec(family="dpmpp", order=2, nfe=4)
    disc = Discretization.from_times(VE, heuristic_times("logsnr", VE, 4))
    assert hard_loss(disc, GM, VE, spec, ds.x_T[2], ds.y[2]) == \
        soft_loss(disc, GM, VE, spec, ds.x_T[2], ds.y[2])


def test_select_init_picks_the_argmin():
    ds = small_dataset(count=8)
    spec = SolverSpec(family="dpmpp", order=2, nfe=4)
    _, val_idx = split_indices(ds.count, ds.seed)
    xi, kind, val = select_init(GM, VE, spec, ds, val_idx)
    per_kind = {}
    for k in ("uniform", "quadratic", "edm", "logsnr"):
        disc = Discretization.from_times(VE, heuristic_times(k, VE, 4))
        per_kind[k] = mean_hard_loss(disc, GM, VE, spec, ds, val_idx)
    assert kind == min(per_kind, key=per_kind.get)
    assert val == per_kind[kind]


# ------------------------------------------------------------------ optimizer


def test_rmsprop_momentum_against_reference_recurrence():
    g = np.random.default_rng(3)
    opt = RmsPropMomentum(4, alpha=0.99, momentum=0.9, eps=1e-8)
    p = np.ones(4)
    p_ref = np.ones(4)
    v = np.zeros(4)
    buf = np.zeros(4)
    for _ in range(25):
        grad = g.normal(size=4)
        opt.step(p, grad, lr=0.01)
        v = 0.99 * v + 0.01 * grad * grad
        buf = 0.9 * buf + grad / (np.sqrt(v) + 1e-8)
        p_ref = p_ref - 0.01 * buf
        np.testing.assert_allclose(p, p_ref, rtol=1e-12, atol=1e-14)


def test_clip_to_norm():
    g = np.array([3.0, 4.0])
    clipped = clip_to_norm(g, 1.0)
    assert abs(np.linalg.norm(clipped) - 1.0) < 1e-12
    np.testing.assert_allclose(clipped, g / 5.0)
    np.testing.assert_array_equal(clip_to_norm(g, 10.0), g)
    np.testing.assert_array_equal(clip_to_norm(g, 0.0), g)  # 0 disables


# ---------------------------------------------------------------- train loop


CFG = TrainConfig(epochs_phase1=1, epochs_phase2=1, seed=0)


def fresh(ds):
    return Dataset(x_T=ds.x_T.copy(), x_prime=ds.x_T.copy(), y=ds.y.copy(),
                   seed=ds.seed, schedule_hash=ds.schedule_hash)


def test_train_improves_and_reports():
    ds = small_dataset(count=8, teacher_nfe=40)
    spec = SolverSpec(family="dpmpp", order=2, nfe=4)
    report = train(ds, GM, VE, spec, CFG)
    assert not report.aborted
    assert report.best_val <= report.init_val_loss
    assert report.init_kind in ("uniform", "quadratic", "edm", "logsnr")
    n_train = 4  # 8 pairs split 50/50
    iters_per_epoch = (n_train + CFG.batch - 1) // CFG.batch
    assert len(report.iter_rows) == 2 * iters_per_epoch
    assert len(report.epoch_rows) == 2
    assert [row[1] for row in report.epoch_rows] == [1, 2]  # phase column
    assert report.max_ball_violation <= 1e-9
    disc = report.best_discretization(VE, 4)
    assert np.all(np.diff(disc.times()) < 0.0)


def test_train_is_deterministic():
    ds = small_dataset(count=8)
    spec = SolverSpec(family="dpmpp", order=2, nfe=4)
    r1 = train(fresh(ds), GM, VE, spec, CFG)
    r2 = train(fresh(ds), GM, VE, spec, CFG)
    np.testing.assert_array_equal(r1.best_xi, r2.best_xi)
    np.testing.assert_array_equal(r1.best_xi_c, r2.best_xi_c)
    assert r1.val_losses == r2.val_losses
    assert r1.train_losses == r2.train_losses


def test_phase1_freezes_xi_c():
    ds = small_dataset(count=8)
    spec = SolverSpec(family="dpmpp", order=2, nfe=4)
    cfg = replace(CFG, epochs_phase2=0, epochs_phase1=2)
    report = train(fresh(ds), GM, VE, spec, cfg)
    np.testing.assert_array_equal(report.best_xi_c, np.zeros(5))


def test_soft_forcing_alone_still_improves():
    # lr_xi = 0 keeps the grid at its init; optimizing x' must not hurt
    ds = small_dataset(count=8)
    spec = SolverSpec(family="dpmpp", order=2, nfe=4)
    cfg = replace(CFG, lr_xi=0.0, epochs_phase2=0, epochs_phase1=2)
    xi_before = select_init(GM, VE, spec, ds,
                            split_indices(ds.count, ds.seed)[1])[0]
    report = train(ds, GM, VE, spec, cfg)
    np.testing.assert_array_equal(report.best_xi, xi_before)
    assert report.best_val <= report.init_val_loss


def test_zero_radius_reduces_to_hard_forcing():
    ds = small_dataset(count=8)
    spec = SolverSpec(family="dpmpp", order=2, nfe=4)
    cfg = replace(CFG, r_override=0.0)
    report = train(ds, GM, VE, spec, cfg)
    np.testing.assert_array_equal(ds.x_prime, ds.x_T)  # ball has radius 0
    assert report.max_ball_violation <= 0.0


def test_explicit_init_respected_and_bad_init_rejected():
    ds = small_dataset(count=8)
    spec = SolverSpec(family="dpmpp", order=2, nfe=4)
    report = train(fresh(ds), GM, VE, spec, replace(CFG, init="quadratic"))
    assert report.init_kind == "quadratic"
    with pytest.raises(TrainingError):
        train(fresh(ds), GM, VE, spec, replace(CFG, init="karras"))
