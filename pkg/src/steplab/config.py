"""Flat `key = value` run configuration.

Dotted keys, one per line; `#` starts a comment.  Every key has a default,
unknown or repeated keys are rejected, and values are coerced to the type of
their default (tuples are comma-separated).  `format_config` renders the
fully-defaulted table in a form that parses back to the same dict, which is
what the commands snapshot next to their outputs.
"""

from __future__ import annotations

import numpy as np

from . import denoisers, schedule as schedmod
from .solvers import SolverSpec
from .training import Teacher, TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "schedule.family": "ve_edm",
    "schedule.T": 80.0,
    "schedule.t_min": 0.002,
    "schedule.beta0": 0.1,
    "schedule.beta1": 20.0,
    "data.kind": "gm",  # gm | point
    "data.d": 2,
    "data.weights": (0.5, 0.3, 0.2),
    "data.means": (2.0, 1.0, -1.4, 1.8, 0.3, -2.2),  # row-major (K, d)
    "data.vars": (0.25, 0.16, 0.36),
    "data.count": 100,
    "solver.family": "dpmpp",  # dpmpp | euler | ipndm
    "solver.order": 2,
    "solver.nfe": 6,
    "teacher.family": "dpmpp",
    "teacher.order": 2,
    "teacher.nfe": 100,
    "teacher.grid": "logsnr",
    "train.gamma": 0.001,
    "train.r": -1.0,  # >= 0 overrides gamma * d / nfe^2
    "train.epochs_phase1": 2,
    "train.epochs_phase2": 5,
    "train.batch": 2,
    "train.lr_xi": 0.005,
    "train.lr_xic": -1.0,  # < 0 derives 0.1 / nfe
    "train.lr_xprime": -1.0,  # < 0 derives 12.0 / nfe
    "train.clip_norm": 1.0,
    "train.plateau_factor": 0.8,
    "train.plateau_patience": 5,
    "train.lr_floor_xi": 5e-5,
    "train.lr_floor_xic": 1e-6,
    "train.val_refresh_steps": 10,
    "train.init": "auto",
    "sample.count": 64,
    "sample.checkpoint": "",
    "bench.nfes": (4, 6, 8),
    "bench.methods": ("uniform", "quadratic", "edm", "logsnr", "learned"),
    "bench.eval_count": 64,
    "bench.rmsd_ref_nfe": 100,
    "sweep.r_values": (0.0, 0.01, 0.1, 1.0, 5.0),
    "cross.families": ("dpmpp", "euler"),
    "bound.r": 0.19,
    "bound.samples": 100,
    "bound.grid": "logsnr",  # heuristic name or "checkpoint"
}


def _coerce(key, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            if raw.startswith("(") and raw.endswith(")"):
                raw = raw[1:-1].strip()
            if raw == "":
                return ()
            elem = default[0]
            parts = [p.strip() for p in raw.split(",") if p.strip() != ""]
            if isinstance(elem, str):
                return tuple(parts)
            if isinstance(elem, float):
                return tuple(float(p) for p in parts)
            return tuple(int(p) for p in parts)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text):
    cfg = dict(DEFAULTS)
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        cfg[key] = _coerce(key, raw, DEFAULTS[key])
    return cfg


def load_config(path):
    if path is None:
        return dict(DEFAULTS)
    with open(path) as fh:
        return parse_config(fh.read())


def _fmt_value(v):
    if isinstance(v, tuple):
        return ",".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg):
    lines = [f"{k} = {_fmt_value(cfg[k])}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def write_snapshot(cfg, path):
    with open(path, "w") as fh:
        fh.write(format_config(cfg))


# ------------------------------------------------------------------ builders


def build_schedule(cfg):
    fam = cfg["schedule.family"]
    if fam == "ve_edm":
        return schedmod.ve_edm(T=cfg["schedule.T"], t_min=cfg["schedule.t_min"])
    if fam == "vp_linear":
        return schedmod.vp_linear(beta0=cfg["schedule.beta0"],
                                  beta1=cfg["schedule.beta1"],
                                  T=cfg["schedule.T"],
                                  t_min=cfg["schedule.t_min"])
    raise ConfigError(f"unknown schedule.family {fam!r}")


def build_denoiser(cfg, sched):
    d = cfg["data.d"]
    means = np.asarray(cfg["data.means"], dtype=np.float64)
    if cfg["data.kind"] == "point":
        return denoisers.PointDenoiser.create(sched, means[:d])
    if cfg["data.kind"] != "gm":
        raise ConfigError(f"unknown data.kind {cfg['data.kind']!r}")
    k = len(cfg["data.weights"])
    if means.shape[0] != k * d:
        raise ConfigError("data.means must hold K*d values")
    return denoisers.GMDenoiser.create(sched, cfg["data.weights"],
                                       means.reshape(k, d),
                                       cfg["data.vars"])


def build_solver_spec(cfg, nfe=None):
    try:
        return SolverSpec(family=cfg["solver.family"],
                          order=cfg["solver.order"],
                          nfe=int(nfe if nfe is not None else cfg["solver.nfe"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_teacher(cfg, den, sched):
    return Teacher.create(den, sched, family=cfg["teacher.family"],
                          order=cfg["teacher.order"], nfe=cfg["teacher.nfe"],
                          grid=cfg["teacher.grid"])


def build_train_config(cfg):
    return TrainConfig(
        gamma=cfg["train.gamma"],
        r_override=cfg["train.r"],
        epochs_phase1=cfg["train.epochs_phase1"],
        epochs_phase2=cfg["train.epochs_phase2"],
        batch=cfg["train.batch"],
        lr_xi=cfg["train.lr_xi"],
        lr_xic=cfg["train.lr_xic"],
        lr_xprime=cfg["train.lr_xprime"],
        clip_norm=cfg["train.clip_norm"],
        plateau_factor=cfg["train.plateau_factor"],
        plateau_patience=cfg["train.plateau_patience"],
        lr_floor_xi=cfg["train.lr_floor_xi"],
        lr_floor_xic=cfg["train.lr_floor_xic"],
        val_refresh_steps=cfg["train.val_refresh_steps"],
        init=cfg["train.init"],
        seed=cfg["seed"],
    )
