"""Epsilon predictors: analytic (Gaussian mixture, point mass) and a small MLP.

All predictors implement epsilon(x, t) -> noise estimate in the convention

    eps(x, t) = -sigma_t * grad_x log q_t(x),

where q_t is the forward marginal of the data distribution under the noise
schedule.  For a Gaussian mixture with isotropic components
N(mu_k, s_k^2 I) the marginal is the mixture of N(alpha_t mu_k,
(alpha_t^2 s_k^2 + sigma_t^2) I) and the score is a responsibility-weighted
combination, so epsilon is available in closed form.  For a point mass x0
it reduces to (x - alpha_t x0) / sigma_t.

Everything is written with engine ops, so epsilon can be evaluated inside a
differentiated solver graph (gradients flow to x and t), and the MLP can be
trained by denoising score matching with the same machinery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import engine as en
from . import rng as rngmod

_LOG_2PI = float(np.log(2.0 * np.pi))


def _mixture_log_terms(x, t, sched, weights, means, variances):
    """Per-component log w_k + log N(x; alpha mu_k, (alpha^2 s_k^2 + sigma^2) I)."""
    sched.check_domain(t)
    a, s = sched.alpha_sigma(t)
    d = means.shape[1]
    s2 = en.mul(s, s)
    a2 = en.mul(a, a) if not isinstance(a, float) else a * a
    terms = []
    diffs = []
    varis = []
    for k in range(means.shape[0]):
        v = a2 * float(variances[k]) + s2
        diff = en.sub(x, en.mul(a, means[k]) if not isinstance(a, float)
                      else a * means[k])
        q = en.dot(diff, diff)
        logn = -0.5 * d * (en.log(v) + _LOG_2PI) - q / (2.0 * v)
        terms.append(float(np.log(weights[k])) + logn)
        diffs.append(diff)
        varis.append(v)
    return terms, diffs, varis, s


def gm_epsilon(x, t, sched, weights, means, variances):
    """Exact epsilon for Gaussian-mixture data; works on taped Values too."""
    terms, diffs, varis, s = _mixture_log_terms(x, t, sched, weights, means,
                                                variances)
    lse = en.logsumexp(en.stack(terms))
    acc = None
    for term, diff, v in zip(terms, diffs, varis):
        gamma = en.exp(en.sub(term, lse))
        piece = en.mul(en.div(gamma, v), diff)
        acc = piece if acc is None else en.add(acc, piece)
    return en.mul(s, acc)


def gm_log_density(x, t, sched, weights, means, variances):
    """log q_t(x) of the mixture marginal at time t."""
    terms, _, _, _ = _mixture_log_terms(x, t, sched, weights, means, variances)
    return en.logsumexp(en.stack(terms))


def point_epsilon(x, t, sched, x0):
    """Exact epsilon when the data distribution is a point mass at x0."""
    sched.check_domain(t)
    a, s = sched.alpha_sigma(t)
    ax0 = en.mul(a, x0) if not isinstance(a, float) else a * x0
    return en.div(en.sub(x, ax0), s)


@dataclass(frozen=True)
class GMDenoiser:
    """Gaussian-mixture data distribution with its exact epsilon predictor."""

    sched: object
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @classmethod
    def create(cls, sched, weights, means, variances):
        weights = np.asarray(weights, dtype=np.float64)
        means = np.asarray(means, dtype=np.float64)
        variances = np.asarray(variances, dtype=np.float64)
        if means.ndim != 2:
            raise ValueError("means must be (K, d)")
        if weights.shape != (means.shape[0],) or variances.shape != weights.shape:
            raise ValueError("weights/variances must be (K,)")
        if np.any(weights <= 0) or np.any(variances <= 0):
            raise ValueError("weights and variances must be positive")
        weights = weights / weights.sum()
        return cls(sched=sched, weights=weights, means=means, variances=variances)

    @property
    def d(self):
        return self.means.shape[1]

    def epsilon(self, x, t):
        return gm_epsilon(x, t, self.sched, self.weights, self.means,
                          self.variances)

    def log_density(self, x, t):
        return gm_log_density(x, t, self.sched, self.weights, self.means,
                              self.variances)

    def sample_data(self, count, seed):
        """Exact samples from the mixture, one substream per index."""
        cum = np.cumsum(self.weights)
        out = np.empty((count, self.d), dtype=np.float64)
        for i in range(count):
            g = rngmod.substream(seed, "gm_data", i)
            k = int(np.searchsorted(cum, g.random()))
            k = min(k, len(cum) - 1)
            out[i] = self.means[k] + np.sqrt(self.variances[k]) * g.standard_normal(self.d)
        return out


@dataclass(frozen=True)
class PointDenoiser:
    """Point-mass data distribution at x0."""

    sched: object
    x0: np.ndarray

    @classmethod
    def create(cls, sched, x0):
        return cls(sched=sched, x0=np.asarray(x0, dtype=np.float64))

    @property
    def d(self):
        return self.x0.shape[0]

    def epsilon(self, x, t):
        return point_epsilon(x, t, self.sched, self.x0)

    def sample_data(self, count, seed):
        return np.tile(self.x0, (count, 1))


# ----------------------------------------------------------------- MLP


def _time_features(lam, freqs):
    feats = []
    for f in freqs:
        feats.append(en.sin(en.mul(f, lam) if isinstance(lam, en.Value) else f * lam))
        feats.append(en.cos(en.mul(f, lam) if isinstance(lam, en.Value) else f * lam))
    return feats


@dataclass
class MlpDenoiser:
    """Small dense epsilon predictor on features (x, sin/cos of log-SNR)."""

    sched: object
    d: int
    hidden: tuple
    freqs: tuple
    layers: list  # [(W, b), ...] numpy float64

    @classmethod
    def create(cls, sched, d, hidden=(64, 64), freqs=(0.25, 0.5, 1.0, 2.0),
               seed=0):
        widths = [d + 2 * len(freqs)] + list(hidden) + [d]
        g = rngmod.substream(seed, "mlp_init")
        layers = []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            w = g.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
            b = np.zeros(n_out, dtype=np.float64)
            layers.append((w, b))
        return cls(sched=sched, d=d, hidden=tuple(hidden), freqs=tuple(freqs),
                   layers=layers)

    def _c_in(self, t):
        # 1/sqrt(alpha^2 + sigma^2) keeps the x feature near unit scale for
        # any schedule (identically 1 under VP); without it the VE input
        # range [t_min, 80] blows up training
        a, s = self.sched.alpha_sigma(t)
        return en.div(1.0, en.sqrt(en.add(en.mul(a, a), en.mul(s, s))))

    def epsilon(self, x, t):
        """Single-vector evaluation; differentiable in x and t."""
        self.sched.check_domain(t)
        lam = self.sched.lam(t)
        feats = _time_features(lam, self.freqs)
        h = en.concat(en.mul(self._c_in(t), x), en.stack(feats))
        for i, (w, b) in enumerate(self.layers):
            h = en.add(en.matvec(w, h), b)
            if i + 1 < len(self.layers):
                h = en.silu(h)
        return h

    def features_batch(self, x_t, t):
        """Constant feature matrix for a raw batch (used for DSM training)."""
        lam = np.array([float(en.data_of(self.sched.lam(float(tv)))) for tv in t])
        c_in = np.array([float(en.data_of(self._c_in(float(tv)))) for tv in t])
        cols = [c_in[:, None] * x_t]
        for f in self.freqs:
            cols.append(np.sin(f * lam)[:, None])
            cols.append(np.cos(f * lam)[:, None])
        return np.concatenate(cols, axis=1)

    def forward_batch(self, feats, params):
        """Dense chain on a constant feature matrix with (possibly taped) params."""
        h = feats
        last = len(params) - 1
        for i, (w, b) in enumerate(params):
            h = en.affine(h, w, b)
            if i < last:
                h = en.silu(h)
        return h

    # ------------------------------------------------------------- storage

    def save(self, path):
        blob = {
            "d": self.d,
            "hidden": list(self.hidden),
            "freqs": list(self.freqs),
            "layers": [{"shape": list(w.shape),
                        "w": [float(v) for v in w.reshape(-1)],
                        "b": [float(v) for v in b]} for w, b in self.layers],
        }
        with open(path, "w") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path, sched):
        with open(path) as fh:
            blob = json.load(fh)
        layers = []
        for rec in blob["layers"]:
            m, n = rec["shape"]
            w = np.asarray(rec["w"], dtype=np.float64).reshape(m, n)
            b = np.asarray(rec["b"], dtype=np.float64)
            layers.append((w, b))
        return cls(sched=sched, d=int(blob["d"]), hidden=tuple(blob["hidden"]),
                   freqs=tuple(blob["freqs"]), layers=layers)


@dataclass(frozen=True)
class DsmConfig:
    steps: int = 3000
    batch: int = 64
    lr: float = 0.02
    momentum: float = 0.9
    seed: int = 0
    omega: str = "one"  # per-sample weight: "one" or "snr"


class DsmDivergedError(RuntimeError):
    """Non-finite DSM loss; message carries the offending step index."""


def train_mlp_dsm(dist, sched, config=DsmConfig(), hidden=(64, 64),
                  freqs=(0.25, 0.5, 1.0, 2.0)):
    """Fit an MlpDenoiser by denoising score matching.

    Args:
        dist: data distribution with sample_data(count, seed); x0 batches
            are drawn fresh from it each step.
        sched: NoiseSchedule providing the forward marginals.
        config: DsmConfig; omega weights the per-sample squared error.

    Returns:
        (MlpDenoiser, list of recorded losses)
    """
    d = dist.d
    den = MlpDenoiser.create(sched, d, hidden=hidden, freqs=freqs,
                             seed=config.seed)
    g = rngmod.substream(config.seed, "dsm")
    bufs = [(np.zeros_like(w), np.zeros_like(b)) for w, b in den.layers]
    losses = []
    for step in range(config.steps):
        x0 = dist.sample_data(config.batch,
                              rngmod.derive_seed(config.seed, "dsm_x0", step))
        t = sched.t_min + (sched.T - sched.t_min) * g.random(config.batch)
        noise = g.standard_normal((config.batch, d))
        a = np.array([float(en.data_of(sched.alpha(float(tv)))) for tv in t])
        s = np.array([float(en.data_of(sched.sigma(float(tv)))) for tv in t])
        x_t = a[:, None] * x0 + s[:, None] * noise
        feats = den.features_batch(x_t, t)

        tape = en.Tape()
        params = [(tape.leaf(w), tape.leaf(b)) for w, b in den.layers]
        pred = den.forward_batch(feats, params)
        resid = en.sub(pred, noise)
        sq = en.mul(resid, resid)
        if config.omega == "snr":
            lam = np.array([float(en.data_of(sched.lam(float(tv)))) for tv in t])
            wts = np.exp(lam)
            sq = en.mul(sq, np.broadcast_to(wts[:, None], (config.batch, d)).copy())
        elif config.omega != "one":
            raise ValueError(f"unknown omega weighting {config.omega!r}")
        loss = en.mul(en.vsum(sq), 1.0 / (config.batch * d))
        if not np.isfinite(en.data_of(loss)):
            raise DsmDivergedError(f"non-finite DSM loss at step {step}")
        flat = [p for pair in params for p in pair]
        grads = tape.gradient(loss, flat)
        for li, (w, b) in enumerate(den.layers):
            gw, gb = grads[2 * li], grads[2 * li + 1]
            bw, bb = bufs[li]
            bw *= config.momentum
            bw += gw
            bb *= config.momentum
            bb += gb
            w -= config.lr * bw
            b -= config.lr * bb
        losses.append(float(en.data_of(loss)))
    return den, losses
