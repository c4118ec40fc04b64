import numpy as np
import pytest
from hypothesis import given, strategies as st

from shortcut import autograd as ag
from shortcut.errors import ContractError, ShapeError

from oracles import central_diff, rel_err, small_net, tape_grad


def rand(rng, *shape):
    return rng.normal(size=shape)


# (name, builder(rng) -> (params, loss_fn))
def _op_cases():
    def matmul(rng):
        p = {"a": rand(rng, 3, 4), "b": rand(rng, 4, 2)}
        return p, lambda P: ag.sum_all(ag.square(ag.matmul(P["a"], P["b"])))

    def add(rng):
        p = {"a": rand(rng, 3, 2), "b": rand(rng, 3, 2)}
        return p, lambda P: ag.sum_all(ag.square(ag.add(P["a"], P["b"])))

    def sub(rng):
        p = {"a": rand(rng, 3, 2), "b": rand(rng, 3, 2)}
        return p, lambda P: ag.sum_all(ag.square(ag.sub(P["a"], P["b"])))

    def mul(rng):
        p = {"a": rand(rng, 3, 2), "b": rand(rng, 3, 2)}
        return p, lambda P: ag.sum_all(ag.mul(P["a"], P["b"]))

    def silu(rng):
        p = {"a": rand(rng, 4, 3) * 3}
        return p, lambda P: ag.sum_all(ag.silu(P["a"]))

    def scale(rng):
        p = {"a": rand(rng, 5)}
        return p, lambda P: ag.sum_all(ag.square(ag.scale(P["a"], -1.7)))

    def add_bias(rng):
        p = {"x": rand(rng, 4, 3), "b": rand(rng, 3)}
        return p, lambda P: ag.sum_all(ag.square(ag.add_bias(P["x"], P["b"])))

    def gather(rng):
        p = {"t": rand(rng, 5, 3)}
        idx = np.array([0, 4, 4, 2, 0, 0])
        return p, lambda P: ag.sum_all(ag.square(ag.gather_rows(P["t"], idx)))

    def mean(rng):
        p = {"a": rand(rng, 3, 3)}
        return p, lambda P: ag.mean_all(ag.square(P["a"]))

    def mse(rng):
        p = {"a": rand(rng, 6, 2), "b": rand(rng, 6, 2)}
        return p, lambda P: ag.mse(P["a"], P["b"])

    def reuse(rng):
        # one tensor feeding several ops: gradients must accumulate
        p = {"a": rand(rng, 3, 3)}
        return p, lambda P: ag.sum_all(ag.mul(ag.silu(P["a"]), ag.matmul(P["a"], P["a"])))

    return [matmul, add, sub, mul, silu, scale, add_bias, gather, mean, mse, reuse]


@pytest.mark.parametrize("case", _op_cases(), ids=lambda c: c.__name__)
@pytest.mark.parametrize("seed", range(20))
def test_op_matches_central_differences(case, seed):
    params, fn = case(np.random.default_rng(seed))
    fd = central_diff(lambda p: float(fn(p).data), params)
    assert rel_err(tape_grad(fn, params), fd) < 1e-3


@pytest.mark.parametrize("seed", range(20))
def test_net_forward_gradient(seed):
    net, params = small_net(seed, num_classes=3)
    rng = np.random.default_rng(seed + 100)
    x = rng.normal(size=(5, 2))
    t = rng.random(5)
    b = rng.integers(0, net.config.num_d_buckets, 5)
    lab = rng.integers(0, 4, 5)
    y = rng.normal(size=(5, 2))

    def fn(P):
        return ag.mse(net.forward(P, x, t, b, lab), ag.Tensor(y))

    fd = central_diff(lambda p: float(fn(p).data), params)
    assert rel_err(tape_grad(fn, params), fd) < 1e-3


def test_float32_default_and_float64_preserved():
    assert ag.Tensor([1.0, 2.0]).dtype == np.float32
    assert ag.Tensor(np.zeros(2)).dtype == np.float64


def test_untracked_ops_do_not_record():
    a = ag.Tensor(np.ones((2, 2)))
    with ag.Tape() as tape:
        ag.matmul(a, a)
    assert tape.records == []


def test_stopgrad_blocks_gradient():
    a = ag.Tensor(np.array([1.0, 2.0, 3.0]))
    with ag.Tape() as tape:
        tape.watch([a])
        loss = ag.sum_all(ag.mul(a, ag.stopgrad(a)))
    (g,) = tape.gradient(loss, [a])
    np.testing.assert_array_equal(g, a.data)  # d/da (a * const) = const


def test_unreached_source_gets_zeros():
    a, b = ag.Tensor(np.ones(3)), ag.Tensor(np.ones(4))
    with ag.Tape() as tape:
        tape.watch([a, b])
        loss = ag.sum_all(ag.square(a))
    ga, gb = tape.gradient(loss, [a, b])
    np.testing.assert_array_equal(gb, np.zeros(4))
    np.testing.assert_array_equal(ga, 2 * np.ones(3))


def test_non_scalar_loss_rejected():
    a = ag.Tensor(np.ones(3))
    with ag.Tape() as tape:
        tape.watch([a])
        out = ag.square(a)
    with pytest.raises(ContractError):
        tape.gradient(out, [a])


@pytest.mark.parametrize("op", [ag.add, ag.sub, ag.mul, ag.mse])
def test_shape_mismatch(op):
    with pytest.raises(ShapeError):
        op(ag.Tensor(np.ones((2, 3))), ag.Tensor(np.ones((3, 2))))


def test_matmul_and_bias_shape_errors():
    with pytest.raises(ShapeError):
        ag.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ag.add_bias(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ShapeError):
        ag.gather_rows(np.ones((2, 3)), [2])


@given(c1=st.floats(-3, 3), c2=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_gradient_is_linear_in_the_loss(c1, c2, seed):
    rng = np.random.default_rng(seed)
    a = ag.Tensor(rng.normal(size=(3, 2)))
    b = ag.Tensor(rng.normal(size=(2, 2)))

    def grads(fn):
        with ag.Tape() as tape:
            tape.watch([a, b])
            loss = fn()
        return tape.gradient(loss, [a, b])

    f = lambda: ag.sum_all(ag.silu(ag.matmul(a, b)))
    g = lambda: ag.mean_all(ag.square(ag.matmul(a, b)))
    both = grads(lambda: ag.add(ag.scale(f(), c1), ag.scale(g(), c2)))
    sep_f, sep_g = grads(f), grads(g)
    for k in range(2):
        np.testing.assert_allclose(both[k], c1 * sep_f[k] + c2 * sep_g[k], atol=1e-10)


def test_backward_alias_and_mapping_sources():
    a = ag.Tensor(np.array([2.0]).reshape(()))
    with ag.Tape() as tape:
        tape.watch([a])
        loss = ag.square(a)
    assert ag.backward(tape, loss, {"a": a})["a"] == pytest.approx(4.0)


# -- small analytic cases -------------------------------------------------------------


def test_analytic_values():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ag.matmul(np.eye(2), A).data, A)
    np.testing.assert_array_equal(ag.matmul(A, np.array([[0.0], [1.0]])).data, [[2.0], [4.0]])
    np.testing.assert_array_equal(ag.add(A, np.zeros((2, 2))).data, A)
    assert float(ag.silu(np.zeros(1)).data[0]) == 0.0
    assert float(ag.mse(A, A).data) == 0.0
    assert float(ag.mse(np.array([1.0, 0.0]), np.array([0.0, 1.0])).data) == 1.0


def test_square_gradient_at_three():
    x = {"x": np.array([3.0])}
    fn = lambda P: ag.sum_all(ag.square(P["x"]))
    assert tape_grad(fn, x)["x"][0] == pytest.approx(6.0)
    assert central_diff(lambda p: float(fn(p).data), x)["x"][0] == pytest.approx(6.0)


def test_mse_gradient_closed_form():
    rng = np.random.default_rng(0)
    p = {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 3))}
    g = tape_grad(lambda P: ag.mse(P["a"], P["b"]), p)
    np.testing.assert_allclose(g["a"], 2 * (p["a"] - p["b"]) / 12)
    np.testing.assert_allclose(g["b"], -2 * (p["a"] - p["b"]) / 12)


def test_sum_and_scalar_regression_gradients():
    w = {"w": np.array([0.7, -1.0, 2.0])}
    np.testing.assert_array_equal(tape_grad(lambda P: ag.sum_all(P["w"]), w)["w"], np.ones(3))
    x, y = 1.5, -0.4
    p = {"w": np.array([0.8])}
    fn = lambda P: ag.mse(ag.scale(P["w"], x), np.array([y]))
    want = 2 * x * (0.8 * x - y)
    assert tape_grad(fn, p)["w"][0] == pytest.approx(want)
    assert central_diff(lambda q: float(fn(q).data), p)["w"][0] == pytest.approx(want, rel=1e-6)


def test_stopgrad_treats_argument_as_constant():
    rng = np.random.default_rng(1)
    p = {"w": rng.normal(size=(2, 2))}
    x = rng.normal(size=(3, 2))
    f = lambda P: ag.silu(ag.matmul(x, P["w"]))
    frozen = f(p).data.copy()
    g_stop = tape_grad(lambda P: ag.mse(ag.stopgrad(f(P)), ag.scale(f(P), 2.0)), p)
    g_const = tape_grad(lambda P: ag.mse(frozen, ag.scale(f(P), 2.0)), p)
    np.testing.assert_allclose(g_stop["w"], g_const["w"], rtol=1e-12)
    np.testing.assert_array_equal(ag.stopgrad(ag.Tensor(frozen)).data, frozen)
    # only the stopped branch depends on w: gradient is exactly zero
    g0 = tape_grad(lambda P: ag.mse(ag.stopgrad(f(P)), np.zeros((3, 2))), p)
    assert not g0["w"].any()


def test_shortcut_loss_gradient_flows_only_through_big_step_branch():
    """Tracked target computation + stopgrad gives the same gradient as a frozen target."""
    from shortcut import objectives as ob

    net, params = small_net(5)
    x = np.random.default_rng(2).normal(size=(6, 2))
    t = np.zeros(6)
    d = np.full(6, 1 / 8)

    def loss(P, detach_target=True):
        s1 = net.forward(P, x, t, 0)
        s2 = net.forward(P, ag.add(ag.Tensor(x), ag.scale(s1, 1 / 8)), t + d, 0)
        target = ag.scale(ag.add(s1, s2), 0.5)
        pred = net.forward(P, x, t, 1)
        if detach_target:
            return ag.mse(pred, ag.stopgrad(target))
        return ag.mse(ag.stopgrad(pred), target)

    frozen, _ = ob.make_shortcut_targets(net, params, x, t, d)
    g = tape_grad(loss, params)
    g_ref = tape_grad(lambda P: ag.mse(net.forward(P, x, t, 1), frozen), params)
    assert rel_err(g, g_ref) < 1e-6
    # with the big-step branch detached instead, the d_embed row of bucket 1 gets nothing
    g_other = tape_grad(lambda P: loss(P, detach_target=False), params)
    assert not g_other["d_embed"][1].any()
