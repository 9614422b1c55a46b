"""Tape engine: every primitive against central finite differences, plus the
checkpointed chain-gradient contract (equality with the whole tape, bitwise
replay, constant retention per step)."""

import numpy as np
import pytest

import steplab.engine as en


def fd_grad(f, x, eps=1e-6):
    """Central finite differences of scalar f at array/scalar x."""
    x = np.asarray(x, dtype=np.float64).copy()
    if x.ndim == 0:
        return (f(x + eps) - f(x - eps)) / (2 * eps)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        fp = f(x)
        flat[i] = keep - eps
        fm = f(x)
        flat[i] = keep
        gf[i] = (fp - fm) / (2 * eps)
    return g


def taped_grad(f, x):
    tape = en.Tape()
    xv = tape.leaf(x)
    return tape.gradient(f(xv), [xv])[0]


def check_op(f, x, eps=1e-6, tol=1e-6):
    got = taped_grad(f, x)
    want = fd_grad(lambda v: float(en.data_of(f(v))), x, eps)
    np.testing.assert_allclose(got, want, rtol=tol, atol=tol)


W = np.array([0.7, -1.3, 0.4])  # fixed weights make per-element errors visible
X = np.array([0.3, -0.8, 1.7])


def weighted(op):
    return lambda x: en.dot(W, op(x))


UNARY_CASES = [
    ("neg", en.neg, X),
    ("exp", en.exp, X),
    ("expm1", en.expm1, X),
    ("log", en.log, np.array([0.2, 1.1, 3.0])),
    ("sqrt", en.sqrt, np.array([0.5, 1.0, 4.2])),
    ("sin", en.sin, X),
    ("cos", en.cos, X),
    ("tanh", en.tanh, X),
    ("sigmoid", en.sigmoid, X),
    ("silu", en.silu, X),
    ("rcumsum", en.rcumsum, X),
    ("pow", lambda x: en.powc(x, 3.0), X),
    ("softmax", en.softmax, X),
]


@pytest.mark.parametrize("name,op,x", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
def test_unary_ops_match_fd(name, op, x):
    check_op(weighted(op), x)


def test_clamp_grad_passes_through_inside_only():
    x = np.array([-2.0, 0.5, 3.0])
    g = taped_grad(weighted(lambda v: en.clamp(v, 0.0, 1.0)), x)
    np.testing.assert_allclose(g, [0.0, W[1], 0.0])


BINARY_CASES = [
    ("add", en.add),
    ("sub", en.sub),
    ("mul", en.mul),
    ("div", en.div),
]


@pytest.mark.parametrize("name,op", BINARY_CASES, ids=[c[0] for c in BINARY_CASES])
def test_binary_ops_match_fd_both_slots(name, op):
    a = np.array([0.4, -1.2, 2.5])
    b = np.array([1.3, 0.7, -0.6])
    check_op(lambda x: en.dot(W, op(x, b)), a)
    check_op(lambda x: en.dot(W, op(a, x)), b)


def test_scalar_array_broadcast_reduces_adjoint():
    a = np.array([1.0, 2.0, 3.0])
    check_op(lambda s: en.dot(W, en.mul(s, a)), 0.7)
    check_op(lambda s: en.dot(W, en.add(a, s)), -0.3)


def test_operator_overloads_and_reflected_forms():
    tape = en.Tape()
    x = tape.leaf(2.0)
    y = 1.0 + x * 3.0 - 4.0 / x + (-x) + x ** 2
    g = tape.gradient(y, [x])[0]
    # d/dx (1 + 3x - 4/x - x + x^2) = 3 + 4/x^2 - 1 + 2x
    assert abs(g - (3 + 1 - 1 + 4)) < 1e-12


def test_dot_norm_logsumexp_match_fd():
    x = np.array([0.9, -0.4, 0.2])
    check_op(lambda v: en.dot(v, v), x)
    check_op(en.norm, x)
    check_op(en.logsumexp, x)


def test_vsum_and_index():
    check_op(en.vsum, X)
    check_op(lambda v: en.index(v, 1), X)


def test_stack_concat_mixed_parents():
    def f(v):
        s = en.stack([en.index(v, 0), 2.5, en.index(v, 2)])  # constant slot
        return en.dot(W, s)
    check_op(f, X)

    def g(v):
        joined = en.concat(v, np.array([1.0, 2.0]))
        return en.dot(np.array([1.0, -1.0, 0.5, 0.25, 2.0]), joined)
    check_op(g, X)


def test_matvec_and_affine_match_fd():
    w = np.array([[0.3, -0.7], [1.1, 0.2], [0.5, 0.9]])
    v = np.array([0.4, -1.0])
    check_op(lambda m: en.dot(W, en.matvec(m, v)), w)
    check_op(lambda u: en.dot(W, en.matvec(w, u)), v)

    xb = np.array([[0.1, -0.5], [0.8, 0.3]])
    bias = np.array([0.2, -0.1, 0.6])

    def lossx(x):
        return en.vsum(en.affine(x, w, bias))

    def lossw(m):
        return en.vsum(en.affine(xb, m, bias))

    def lossb(b):
        return en.vsum(en.affine(xb, w, b))

    check_op(lossx, xb)
    check_op(lossw, w)
    check_op(lossb, bias)


def test_fanout_accumulates():
    tape = en.Tape()
    x = tape.leaf(1.5)
    y = x * x + en.exp(x) * x  # x used three times
    g = tape.gradient(y, [x])[0]
    want = 2 * 1.5 + np.exp(1.5) * (1 + 1.5)
    assert abs(g - want) < 1e-12


def test_unused_leaf_gets_zeros():
    tape = en.Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    z = tape.leaf(np.array([3.0, 4.0]))
    g = tape.gradient(en.vsum(x), [x, z])
    np.testing.assert_array_equal(g[1], np.zeros(2))


def test_cold_path_returns_plain_numpy():
    out = en.exp(np.array([0.0, 1.0]))
    assert not isinstance(out, en.Value)
    tape = en.Tape()
    hot = en.exp(tape.leaf(np.array([0.0, 1.0])))
    assert np.array_equal(out, hot.data)  # bitwise: same numpy call


def test_repeated_backward_same_tape():
    tape = en.Tape()
    x = tape.leaf(np.array([1.0, 2.0, 3.0]))
    y = en.dot(x, x)
    g1 = tape.gradient(y, [x])[0]
    g2 = tape.gradient(y, [x])[0]
    np.testing.assert_array_equal(g1, g2)


def test_mixed_tapes_rejected():
    t1, t2 = en.Tape(), en.Tape()
    a = t1.leaf(1.0)
    b = t2.leaf(2.0)
    with pytest.raises(en.EngineError, match="different tapes"):
        en.add(a, b)


def test_value_exponent_rejected():
    tape = en.Tape()
    x = tape.leaf(2.0)
    with pytest.raises(en.EngineError, match="constant"):
        en.powc(x, x)


def test_seed_shape_mismatch_rejected():
    tape = en.Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    with pytest.raises(en.EngineError, match="shape"):
        tape.backward([(x, np.zeros(3))], [x])


def test_foreign_seed_and_leaf_rejected():
    t1, t2 = en.Tape(), en.Tape()
    x = t1.leaf(1.0)
    y = t2.leaf(1.0)
    with pytest.raises(en.EngineError):
        t1.backward([(y, 1.0)], [y])
    with pytest.raises(en.EngineError):
        t1.gradient(x, [y])


def test_nonfinite_adjoint_names_the_op():
    tape = en.Tape()
    x = tape.leaf(0.0)
    v = en.sin(x)           # 0, recorded as op "sin"
    y = en.sqrt(v)          # d/dv is inf at 0, so the sin node gets inf
    with np.errstate(divide="ignore"), \
            pytest.raises(en.EngineError,
                          match=r"non-finite adjoint at op \d+ \(sin\)"):
        tape.gradient(y, [x])


def test_gradient_requires_scalar_output():
    tape = en.Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    with pytest.raises(en.EngineError, match="scalar"):
        tape.gradient(en.exp(x), [x])


# ------------------------------------------------------------- chain gradient


def chain_parts(n_steps):
    """A small solver-shaped chain: prelude builds a step-size vector from xi,
    each step mixes the state nonlinearly, finale is a quadratic loss."""

    def prelude(env):
        times = en.softmax(env["xi"])
        return (times,), (env["x"], en.mul(0.0, env["x"]))

    def make_step(i):
        def step(state, shared):
            x, h = state
            dt = en.index(shared[0], i)
            xn = en.add(x, en.mul(dt, en.tanh(en.sub(x, h))))
            return (xn, en.mul(0.5, en.add(h, x)))
        return step

    def finale(state, shared):
        r = en.sub(state[0], 0.3)
        return en.dot(r, r)

    return prelude, [make_step(i) for i in range(n_steps)], finale


LEAVES4 = {"xi": np.array([0.1, -0.2, 0.4, 0.0]),
           "x": np.array([0.8, -0.5])}


def test_checkpointed_equals_whole_tape():
    prelude, steps, finale = chain_parts(4)
    whole = en.whole_chain_grad(LEAVES4, prelude, steps, finale)
    ck = en.checkpointed_chain_grad(LEAVES4, prelude, steps, finale)
    assert ck.loss == whole.loss
    for k in LEAVES4:
        np.testing.assert_allclose(ck.grads[k], whole.grads[k],
                                   rtol=1e-12, atol=1e-12)


def test_checkpointed_matches_fd():
    prelude, steps, finale = chain_parts(4)

    def loss_at(xi):
        leaves = {"xi": xi, "x": LEAVES4["x"]}
        return en.checkpointed_chain_grad(leaves, prelude, steps, finale).loss

    got = en.checkpointed_chain_grad(LEAVES4, prelude, steps, finale).grads["xi"]
    want = fd_grad(loss_at, LEAVES4["xi"])
    np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-8)


def test_replay_is_bitwise():
    prelude, steps, finale = chain_parts(6)
    leaves = {"xi": np.linspace(-1, 1, 6), "x": np.array([0.3, 0.1])}
    en.checkpointed_chain_grad(leaves, prelude, steps, finale,
                               check_replay=True)  # raises on any divergence


def test_retained_arrays_constant_per_step():
    outs = []
    for n in (4, 10):
        prelude, steps, finale = chain_parts(n)
        leaves = {"xi": np.zeros(n), "x": np.array([0.8, -0.5])}
        res = en.checkpointed_chain_grad(leaves, prelude, steps, finale)
        outs.append(res)
    assert outs[0].retained_per_step == outs[1].retained_per_step
    # whole-tape retention grows with length instead
    p4, s4, f4 = chain_parts(4)
    p10, s10, f10 = chain_parts(10)
    w4 = en.whole_chain_grad({"xi": np.zeros(4), "x": LEAVES4["x"]}, p4, s4, f4)
    w10 = en.whole_chain_grad({"xi": np.zeros(10), "x": LEAVES4["x"]}, p10, s10, f10)
    assert w10.retained_arrays > w4.retained_arrays


def test_constant_state_slots_are_fine():
    # a state slot that never becomes a Value (pure constant history pad)
    def prelude(env):
        return (), (env["x"], np.zeros(2))

    def step(state, shared):
        x, pad = state
        return (en.mul(0.9, x), pad)

    def finale(state, shared):
        return en.dot(state[0], state[0])

    leaves = {"x": np.array([1.0, 2.0])}
    ck = en.checkpointed_chain_grad(leaves, prelude, [step, step], finale)
    whole = en.whole_chain_grad(leaves, prelude, [step, step], finale)
    np.testing.assert_allclose(ck.grads["x"], whole.grads["x"], atol=1e-15)
