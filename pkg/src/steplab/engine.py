"""Reverse-mode automatic differentiation on a tape of numpy float64 values.

A :class:`Value` wraps a scalar or a small numpy array and remembers the tape
position that produced it.  Operations are provided both as module functions
(`exp`, `dot`, `stack`, ...) and as operators on :class:`Value`.  Every
function also accepts plain floats/arrays and then simply computes with numpy
without recording anything, so the same code path can run "hot" (taped) or
"cold" (plain numpy) with bit-identical results.

Gradients are pulled with :meth:`Tape.backward`, which allocates its own
adjoint buffer per call; a tape can therefore be differentiated several times
(e.g. once per Jacobian row).  For long solver chains,
:func:`checkpointed_chain_grad` stores only the per-step states and replays
each step on a throwaway tape during the backward sweep, keeping retained
activations per step constant in chain length.
"""

from __future__ import annotations

import numpy as np


class EngineError(ValueError):
    """Malformed tape use: mixed tapes, bad shapes, non-finite adjoints."""


class Value:
    __slots__ = ("data", "tape", "idx")

    def __repr__(self):
        return f"Value({self.data!r}, op={self.idx})"

    # arithmetic operators; reflected variants cover raw-op-Value
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return powc(self, p)

    def __getitem__(self, i):
        return index(self, i)


def data_of(x):
    return x.data if isinstance(x, Value) else x


def _tape_of(*args):
    tape = None
    for a in args:
        if isinstance(a, Value):
            if tape is None:
                tape = a.tape
            elif tape is not a.tape:
                raise EngineError("operands recorded on different tapes")
    return tape


def _idx(x):
    return x.idx if isinstance(x, Value) else None


def _reduce(g, ref):
    # collapse an array adjoint onto a scalar operand (the only broadcast allowed)
    if np.ndim(ref) == 0 and np.ndim(g) > 0:
        return np.sum(g)
    return g


class Tape:
    __slots__ = ("_parents", "_vjps", "_names")

    def __init__(self):
        self._parents = []
        self._vjps = []
        self._names = []

    def __len__(self):
        return len(self._vjps)

    def leaf(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = np.float64(arr)
        return self._record(arr, (), None, "leaf")

    def _record(self, data, parents, vjp, name):
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._names.append(name)
        v = Value.__new__(Value)
        v.data = data
        v.tape = self
        v.idx = len(self._vjps) - 1
        return v

    def backward(self, seeds, leaves):
        """Pull adjoints from seeded outputs back to `leaves`.

        Args:
            seeds: iterable of (Value, adjoint) pairs; adjoint shape must match.
            leaves: Values whose gradients are wanted.

        Returns:
            List of numpy gradients aligned with `leaves` (zeros when a leaf
            does not influence any seeded output).
        """
        adj = [None] * len(self._vjps)
        top = -1
        for v, s in seeds:
            if not isinstance(v, Value) or v.tape is not self:
                raise EngineError("seed value does not belong to this tape")
            s = np.asarray(s, dtype=np.float64)
            if s.shape != np.shape(v.data):
                raise EngineError("seed adjoint shape mismatch")
            adj[v.idx] = s if adj[v.idx] is None else adj[v.idx] + s
            top = max(top, v.idx)
        for i in range(top, -1, -1):
            a = adj[i]
            if a is None:
                continue
            if not np.all(np.isfinite(a)):
                raise EngineError(f"non-finite adjoint at op {i} ({self._names[i]})")
            vjp = self._vjps[i]
            if vjp is None:
                continue
            for p, g in zip(self._parents[i], vjp(a)):
                if p is None or g is None:
                    continue
                adj[p] = g if adj[p] is None else adj[p] + g
        out = []
        for leaf in leaves:
            if not isinstance(leaf, Value) or leaf.tape is not self:
                raise EngineError("gradient target does not belong to this tape")
            g = adj[leaf.idx]
            out.append(np.zeros_like(leaf.data) if g is None else g)
        return out

    def gradient(self, output, leaves):
        if np.ndim(data_of(output)) != 0:
            raise EngineError("gradient output must be a scalar")
        return self.backward([(output, np.float64(1.0))], leaves)


# ---------------------------------------------------------------- primitives


def _unary(x, fwd, dfn, name):
    xd = data_of(x)
    out = fwd(xd)
    tape = _tape_of(x)
    if tape is None:
        return out

    def vjp(adj):
        return (adj * dfn(xd, out),)

    return tape._record(out, (x.idx,), vjp, name)


def _binary(a, b, fwd, da, db, name):
    ad, bd = data_of(a), data_of(b)
    if np.ndim(ad) > 0 and np.ndim(bd) > 0 and np.shape(ad) != np.shape(bd):
        raise EngineError(f"{name}: shape mismatch {np.shape(ad)} vs {np.shape(bd)}")
    out = fwd(ad, bd)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    pa, pb = _idx(a), _idx(b)

    def vjp(adj):
        ga = _reduce(da(adj, ad, bd), ad) if pa is not None else None
        gb = _reduce(db(adj, ad, bd), bd) if pb is not None else None
        return (ga, gb)

    return tape._record(out, (pa, pb), vjp, name)


def add(a, b):
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def div(a, b):
    return _binary(a, b, np.divide, lambda g, x, y: g / y,
                   lambda g, x, y: -g * x / (y * y), "div")


def neg(x):
    return _unary(x, np.negative, lambda xd, out: -1.0, "neg")


def powc(x, p):
    if isinstance(p, Value):
        raise EngineError("pow: exponent must be a constant")
    return _unary(x, lambda v: np.power(v, p),
                  lambda xd, out: p * np.power(xd, p - 1), "pow")


def exp(x):
    return _unary(x, np.exp, lambda xd, out: out, "exp")


def expm1(x):
    return _unary(x, np.expm1, lambda xd, out: np.exp(xd), "expm1")


def log(x):
    return _unary(x, np.log, lambda xd, out: 1.0 / xd, "log")


def sqrt(x):
    return _unary(x, np.sqrt, lambda xd, out: 0.5 / out, "sqrt")


def sin(x):
    return _unary(x, np.sin, lambda xd, out: np.cos(xd), "sin")


def cos(x):
    return _unary(x, np.cos, lambda xd, out: -np.sin(xd), "cos")


def tanh(x):
    return _unary(x, np.tanh, lambda xd, out: 1.0 - out * out, "tanh")


def _sigmoid_raw(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(x):
    return _unary(x, _sigmoid_raw, lambda xd, out: out * (1.0 - out), "sigmoid")


def silu(x):
    # x * sigmoid(x); derivative s * (1 + x * (1 - s))
    def fwd(v):
        return v * _sigmoid_raw(v)

    def dfn(xd, out):
        s = _sigmoid_raw(xd)
        return s * (1.0 + xd * (1.0 - s))

    return _unary(x, fwd, dfn, "silu")


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient passes through wherever lo <= x <= hi."""

    def dfn(xd, out):
        return ((xd >= lo) & (xd <= hi)).astype(np.float64)

    return _unary(x, lambda v: np.clip(v, lo, hi), dfn, "clamp")


def vsum(x):
    xd = data_of(x)
    out = np.sum(xd)
    tape = _tape_of(x)
    if tape is None:
        return out

    def vjp(adj):
        return (np.full_like(xd, adj),)

    return tape._record(out, (x.idx,), vjp, "sum")


def dot(a, b):
    ad, bd = data_of(a), data_of(b)
    if np.shape(ad) != np.shape(bd):
        raise EngineError("dot: shape mismatch")
    out = np.dot(ad, bd)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    pa, pb = _idx(a), _idx(b)

    def vjp(adj):
        return (adj * bd if pa is not None else None,
                adj * ad if pb is not None else None)

    return tape._record(out, (pa, pb), vjp, "dot")


def norm(x):
    """Euclidean norm; the gradient regularizes only the exact-zero case."""
    xd = data_of(x)
    out = np.sqrt(np.dot(xd, xd))
    tape = _tape_of(x)
    if tape is None:
        return out

    def vjp(adj):
        return (adj * xd / (out if out > 0.0 else 1e-30),)

    return tape._record(out, (x.idx,), vjp, "norm")


def logsumexp(x):
    # the max shift is held constant; the derivative is exact regardless
    xd = data_of(x)
    m = np.max(xd)
    out = m + np.log(np.sum(np.exp(xd - m)))
    tape = _tape_of(x)
    if tape is None:
        return out

    def vjp(adj):
        return (adj * np.exp(xd - out),)

    return tape._record(out, (x.idx,), vjp, "logsumexp")


def softmax(x):
    xd = data_of(x)
    s = exp(sub(x, np.max(xd)))
    return div(s, vsum(s))


def stack(xs):
    """Pack scalars into a 1-D vector (parents may mix Values and constants)."""
    datas = [data_of(x) for x in xs]
    out = np.array(datas, dtype=np.float64)
    tape = _tape_of(*xs)
    if tape is None:
        return out
    parents = tuple(_idx(x) for x in xs)

    def vjp(adj):
        return tuple(adj[k] if parents[k] is not None else None
                     for k in range(len(parents)))

    return tape._record(out, parents, vjp, "stack")


def concat(a, b):
    ad, bd = np.atleast_1d(data_of(a)), np.atleast_1d(data_of(b))
    out = np.concatenate([ad, bd])
    tape = _tape_of(a, b)
    if tape is None:
        return out
    pa, pb = _idx(a), _idx(b)
    na = ad.shape[0]

    def vjp(adj):
        return (adj[:na] if pa is not None else None,
                adj[na:] if pb is not None else None)

    return tape._record(out, (pa, pb), vjp, "concat")


def index(x, i):
    xd = data_of(x)
    out = xd[i]
    tape = _tape_of(x)
    if tape is None:
        return out

    def vjp(adj):
        g = np.zeros_like(xd)
        g[i] = adj
        return (g,)

    return tape._record(out, (x.idx,), vjp, "index")


def rcumsum(x):
    """Suffix sums: out[i] = sum_{j >= i} x[j]."""
    xd = data_of(x)
    out = np.cumsum(xd[::-1])[::-1]
    tape = _tape_of(x)
    if tape is None:
        return out

    def vjp(adj):
        return (np.cumsum(adj),)

    return tape._record(out, (x.idx,), vjp, "rcumsum")


def matvec(w, v):
    wd, vd = data_of(w), data_of(v)
    out = wd @ vd
    tape = _tape_of(w, v)
    if tape is None:
        return out
    pw, pv = _idx(w), _idx(v)

    def vjp(adj):
        return (np.outer(adj, vd) if pw is not None else None,
                wd.T @ adj if pv is not None else None)

    return tape._record(out, (pw, pv), vjp, "matvec")


def affine(x, w, b):
    """Batched dense layer: x @ w.T + b for x of shape (batch, n_in)."""
    xd, wd, bd = data_of(x), data_of(w), data_of(b)
    out = xd @ wd.T + bd
    tape = _tape_of(x, w, b)
    if tape is None:
        return out
    px, pw, pb = _idx(x), _idx(w), _idx(b)

    def vjp(adj):
        return (adj @ wd if px is not None else None,
                adj.T @ xd if pw is not None else None,
                adj.sum(axis=0) if pb is not None else None)

    return tape._record(out, (px, pw, pb), vjp, "affine")


# ---------------------------------------------------- chain differentiation


class ChainGradResult:
    """Loss, per-leaf gradients, and the activation-retention accounting."""

    __slots__ = ("loss", "grads", "retained_arrays", "retained_per_step", "n_steps")

    def __init__(self, loss, grads, retained_arrays, n_steps):
        self.loss = loss
        self.grads = grads
        self.retained_arrays = retained_arrays
        self.n_steps = n_steps
        self.retained_per_step = retained_arrays / n_steps if n_steps else 0.0


def whole_chain_grad(leaves, prelude, steps, finale):
    """Differentiate prelude -> steps -> finale on a single tape.

    Args:
        leaves: dict name -> numpy array/scalar, the differentiation targets.
        prelude: fn(env dict of Values) -> (shared tuple, initial state tuple).
        steps: sequence of pure fns (state, shared) -> state.
        finale: fn(state, shared) -> scalar.

    Returns:
        ChainGradResult with grads keyed like `leaves`.
    """
    tape = Tape()
    env = {k: tape.leaf(v) for k, v in leaves.items()}
    shared, state = prelude(env)
    for step in steps:
        state = step(state, shared)
    loss = finale(state, shared)
    names = list(leaves)
    grads = tape.gradient(loss, [env[k] for k in names])
    return ChainGradResult(float(data_of(loss)), dict(zip(names, grads)),
                           retained_arrays=len(tape), n_steps=len(steps))


def checkpointed_chain_grad(leaves, prelude, steps, finale, check_replay=False):
    """Like :func:`whole_chain_grad` but retaining only per-step states.

    The forward pass runs untaped and caches each step's output state.  The
    backward sweep replays one step at a time on a fresh tape (identical
    numpy call sequence, so replayed values match the forward pass bitwise)
    and accumulates adjoints for the shared prelude outputs; the prelude is
    backpropagated last.  Retained activations across step boundaries are
    exactly the cached state tuples, independent of chain length.
    """
    # cold forward
    raw_env = {k: np.asarray(v, dtype=np.float64) if np.ndim(v) else np.float64(v)
               for k, v in leaves.items()}
    shared_raw, state = prelude(raw_env)
    states = [state]
    for step in steps:
        state = step(state, shared_raw)
        states.append(state)
    loss_raw = float(finale(state, shared_raw))
    retained = sum(len(s) for s in states[1:])

    # prelude tape: classifies which shared/state0 entries are differentiable
    tape_p = Tape()
    env_p = {k: tape_p.leaf(v) for k, v in raw_env.items()}
    shared_p, state0_p = prelude(env_p)
    shared_live = [j for j, s in enumerate(shared_p) if isinstance(s, Value)]
    shared_acc = {j: np.zeros_like(np.asarray(shared_raw[j])) for j in shared_live}

    def replay_tape(raw_state):
        tape = Tape()
        st = tuple(tape.leaf(x) for x in raw_state)
        sh = tuple(tape.leaf(shared_raw[j]) if j in shared_acc else shared_raw[j]
                   for j in range(len(shared_raw)))
        return tape, st, sh

    # finale segment
    tape_f, st_f, sh_f = replay_tape(states[-1])
    loss_v = finale(st_f, sh_f)
    live = [j for j in shared_acc]
    grads = tape_f.backward([(loss_v, np.float64(1.0))],
                            list(st_f) + [sh_f[j] for j in live])
    adj_state = grads[:len(st_f)]
    for j, g in zip(live, grads[len(st_f):]):
        shared_acc[j] += g

    # step segments, last to first
    for i in range(len(steps) - 1, -1, -1):
        tape_i, st_i, sh_i = replay_tape(states[i])
        out = steps[i](st_i, sh_i)
        if check_replay:
            for o, ref in zip(out, states[i + 1]):
                if not np.array_equal(data_of(o), ref):
                    raise EngineError(f"step {i} replay diverged from forward pass")
        seeds = [(o, a) for o, a in zip(out, adj_state) if isinstance(o, Value)]
        grads = tape_i.backward(seeds, list(st_i) + [sh_i[j] for j in live])
        adj_state = grads[:len(st_i)]
        for j, g in zip(live, grads[len(st_i):]):
            shared_acc[j] += g

    # prelude segment
    seeds = [(shared_p[j], shared_acc[j]) for j in live]
    seeds += [(s0, a) for s0, a in zip(state0_p, adj_state) if isinstance(s0, Value)]
    names = list(leaves)
    grads = tape_p.backward(seeds, [env_p[k] for k in names])
    return ChainGradResult(loss_raw, dict(zip(names, grads)),
                           retained_arrays=retained, n_steps=len(steps))
