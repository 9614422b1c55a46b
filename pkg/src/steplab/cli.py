"""Command line front end.

Seven subcommands cover the full workflow: generate a teacher dataset, train
a step grid on it, sample with a saved checkpoint, benchmark heuristics
against the learned grid, sweep the perturbation radius, estimate the
distribution-shift bound, and cross-evaluate grids across solver families.

Every command writes a config snapshot next to its outputs so a run can be
reproduced from the artifacts alone.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import rng as rngmod
from .config import (ConfigError, build_denoiser, build_schedule,
                     build_solver_spec, build_teacher, build_train_config,
                     load_config, write_snapshot)
from .dataio import (FormatError, load_dataset, save_dataset,
                     write_bench_csv, write_bound_json, write_cross_csv,
                     write_metrics_csv, write_sweep_csv)
from .discretize import heuristic_times, load_checkpoint, save_checkpoint
from .evaluate import (bench_cell, bench_eval_assets, cross_eval,
                       estimate_bound, solve_batch, solver_map, sweep_r)
from .solvers import DivergenceError, GridError, SolverSpec
from .training import Dataset, TrainingError, generate_dataset, train

_CROSS_DEFAULT_ORDER = {"euler": 1, "dpmpp": 2, "ipndm": 4}


def _load_cfg(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    return cfg


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _load_ds(args, sched):
    if args.data is None:
        raise ConfigError("this command requires --data")
    ds = load_dataset(args.data)
    if ds.schedule_hash != sched.schedule_hash():
        raise ConfigError(
            f"dataset {args.data} was generated under a different schedule "
            f"(hash {ds.schedule_hash:#x}, config gives "
            f"{sched.schedule_hash():#x})")
    return ds


def _cmd_gen_data(args):
    cfg = _load_cfg(args)
    sched = build_schedule(cfg)
    den = build_denoiser(cfg, sched)
    teacher = build_teacher(cfg, den, sched)
    ds = generate_dataset(den, sched, teacher, cfg["data.count"], cfg["seed"])
    out = args.out or "dataset.bin"
    parent = os.path.dirname(out)
    if parent:
        _ensure_dir(parent)
    save_dataset(out, ds)
    write_snapshot(cfg, out + ".config.txt")
    print(f"wrote {ds.count} pairs (d={ds.d}) to {out}")
    return 0


def _cmd_train(args):
    cfg = _load_cfg(args)
    sched = build_schedule(cfg)
    den = build_denoiser(cfg, sched)
    ds = _load_ds(args, sched)
    spec = build_solver_spec(cfg)
    tc = build_train_config(cfg)
    out = _ensure_dir(args.out or "run")
    report = train(ds, den, sched, spec, tc)
    disc = report.best_discretization(sched, spec.nfe)
    save_checkpoint(os.path.join(out, "checkpoint.json"), disc, spec)
    write_metrics_csv(os.path.join(out, "metrics.csv"), report)
    write_snapshot(cfg, os.path.join(out, "config.txt"))
    status = "aborted" if report.aborted else "done"
    print(f"{status}: best val {report.best_val:.6e} at epoch "
          f"{report.best_epoch}; artifacts in {out}")
    return 0


def _spec_from_checkpoint(cfg, solver_info):
    if solver_info["family"] != cfg["solver.family"]:
        raise ConfigError(
            f"checkpoint was trained for solver family "
            f"'{solver_info['family']}' but config requests "
            f"'{cfg['solver.family']}'")
    return SolverSpec(family=solver_info["family"],
                      order=int(solver_info["order"]),
                      nfe=int(solver_info["nfe"]))


def _cmd_sample(args):
    cfg = _load_cfg(args)
    sched = build_schedule(cfg)
    den = build_denoiser(cfg, sched)
    ckpt = cfg["sample.checkpoint"]
    if not ckpt:
        raise ConfigError("sample needs sample.checkpoint in the config")
    disc, solver_info = load_checkpoint(ckpt, sched)
    spec = _spec_from_checkpoint(cfg, solver_info)
    count = int(cfg["sample.count"])
    x = rngmod.sample_prior(sched, den.d, count,
                            rngmod.derive_seed(cfg["seed"], "sample"))
    out = _ensure_dir(args.out or "samples")
    samples = solve_batch(den, sched, spec, disc.times(), disc.times_c(), x)
    np.save(os.path.join(out, "samples.npy"), samples)
    manifest = {
        "checkpoint": ckpt,
        "count": count,
        "d": den.d,
        "seed": int(cfg["seed"]),
        "solver": {"family": spec.family, "order": spec.order,
                   "nfe": spec.nfe},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_snapshot(cfg, os.path.join(out, "config.txt"))
    print(f"wrote {count} samples (d={den.d}) to {out}")
    return 0


def _bench_worker(cfg, ds_fields, method, nfe, assets):
    """One benchmark cell, rebuilt from plain picklable pieces."""
    sched = build_schedule(cfg)
    den = build_denoiser(cfg, sched)
    spec = build_solver_spec(cfg)
    tc = build_train_config(cfg)
    ds = Dataset(*ds_fields)
    return bench_cell(ds, den, sched, spec, tc, method, nfe, assets,
                      cfg["seed"])


def _cmd_bench(args):
    cfg = _load_cfg(args)
    sched = build_schedule(cfg)
    den = build_denoiser(cfg, sched)
    ds = _load_ds(args, sched)
    teacher = build_teacher(cfg, den, sched)
    assets = bench_eval_assets(den, sched, teacher,
                               int(cfg["bench.eval_count"]),
                               int(cfg["bench.rmsd_ref_nfe"]), cfg["seed"])
    cells = [(method, int(nfe)) for nfe in cfg["bench.nfes"]
             for method in cfg["bench.methods"]]
    ds_fields = (ds.x_T, ds.x_prime, ds.y, ds.seed, ds.schedule_hash)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futs = [pool.submit(_bench_worker, cfg, ds_fields, m, n, assets)
                    for m, n in cells]
            rows = [f.result() for f in futs]  # submission order, not finish
    else:
        rows = [_bench_worker(cfg, ds_fields, m, n, assets)
                for m, n in cells]
    out = _ensure_dir(args.out or "bench")
    write_bench_csv(os.path.join(out, "bench.csv"), rows)
    write_snapshot(cfg, os.path.join(out, "config.txt"))
    print(f"wrote {len(rows)} rows to {os.path.join(out, 'bench.csv')}")
    return 0


def _cmd_sweep_r(args):
    cfg = _load_cfg(args)
    sched = build_schedule(cfg)
    den = build_denoiser(cfg, sched)
    ds = _load_ds(args, sched)
    spec = build_solver_spec(cfg)
    tc = build_train_config(cfg)
    rows = sweep_r(ds, den, sched, spec, tc,
                   [float(r) for r in cfg["sweep.r_values"]])
    out = _ensure_dir(args.out or "sweep")
    write_sweep_csv(os.path.join(out, "sweep.csv"), rows)
    write_snapshot(cfg, os.path.join(out, "config.txt"))
    print(f"wrote {len(rows)} rows to {os.path.join(out, 'sweep.csv')}")
    return 0


def _cmd_bound(args):
    cfg = _load_cfg(args)
    sched = build_schedule(cfg)
    den = build_denoiser(cfg, sched)
    teacher = build_teacher(cfg, den, sched)
    spec = build_solver_spec(cfg)
    grid = cfg["bound.grid"]
    if grid == "checkpoint":
        ckpt = cfg["sample.checkpoint"]
        if not ckpt:
            raise ConfigError(
                "bound.grid = checkpoint needs sample.checkpoint")
        disc, solver_info = load_checkpoint(ckpt, sched)
        spec = _spec_from_checkpoint(cfg, solver_info)
        times, times_c = disc.times(), disc.times_c()
    else:
        times = heuristic_times(grid, sched, spec.nfe)
        times_c = None
    t_map = solver_map(den, sched, teacher.spec, teacher.times)
    s_map = solver_map(den, sched, spec, times, times_c)
    r = float(cfg["bound.r"])
    report = estimate_bound(t_map, s_map, sched, r, den.d,
                            int(cfg["bound.samples"]), cfg["seed"])
    out = _ensure_dir(args.out or "bound")
    write_bound_json(os.path.join(out, "bound.json"), report, cfg["seed"])
    write_snapshot(cfg, os.path.join(out, "config.txt"))
    print(f"terms {report.term1:.6e} + {report.term2:.6e} + "
          f"{report.term3:.6e} = {report.total:.6e}")
    return 0


def _cmd_cross_eval(args):
    cfg = _load_cfg(args)
    sched = build_schedule(cfg)
    den = build_denoiser(cfg, sched)
    ds = _load_ds(args, sched)
    tc = build_train_config(cfg)
    nfe = int(cfg["solver.nfe"])
    specs = []
    for family in cfg["cross.families"]:
        if family == cfg["solver.family"]:
            order = int(cfg["solver.order"])
        else:
            order = _CROSS_DEFAULT_ORDER.get(family)
            if order is None:
                raise ConfigError(f"unknown solver family '{family}' in "
                                  f"cross.families")
        specs.append(SolverSpec(family=family, order=order, nfe=nfe))
    matrix = cross_eval(ds, den, sched, specs, tc)
    labels = [f"{s.family}{s.order}" for s in specs]
    out = _ensure_dir(args.out or "cross")
    write_cross_csv(os.path.join(out, "cross.csv"), matrix, labels)
    write_snapshot(cfg, os.path.join(out, "config.txt"))
    print(f"wrote {len(labels)}x{len(labels)} matrix to "
          f"{os.path.join(out, 'cross.csv')}")
    return 0


_COMMANDS = {
    "gen-data": (_cmd_gen_data, "generate a teacher dataset"),
    "train": (_cmd_train, "learn a step grid on a dataset"),
    "sample": (_cmd_sample, "sample with a saved checkpoint"),
    "bench": (_cmd_bench, "benchmark heuristic and learned grids"),
    "sweep-r": (_cmd_sweep_r, "sweep the perturbation radius"),
    "bound": (_cmd_bound, "estimate the distribution-shift bound"),
    "cross-eval": (_cmd_cross_eval, "evaluate grids across solver families"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="steplab",
        description="learn and evaluate diffusion sampler step grids")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="flat key = value config file (defaults apply)")
        p.add_argument("--out", default=None, help="output file or directory")
        p.add_argument("--data", default=None, help="dataset file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for bench cells")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = _COMMANDS[args.command][0]
    try:
        return handler(args)
    except (ConfigError, FormatError, GridError, DivergenceError,
            TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
