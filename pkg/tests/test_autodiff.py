import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dgt.autodiff as ad
from dgt.autodiff import Adam, NonFiniteGradient, Tensor, load_params, no_grad, save_params
from dgt.gradcheck import check_gradients

SHAPES = [(3,), (2, 5), (3, 2, 4)]
TOL = 1e-4


def _leaf(rng, shape, offset=0.0):
    return Tensor(rng.normal(size=shape) + offset, requires_grad=True)


def _scalarize(out, rng):
    """Random projection to a scalar so every output entry carries gradient."""
    w = Tensor(rng.normal(size=out.shape))
    return ad.sum(out * w)


def _check(fn, inputs):
    errs = check_gradients(fn, inputs)
    assert max(errs) < TOL, errs


UNARY = {
    "relu": ad.relu,
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "exp": ad.exp,
    "softmax": ad.softmax,
    "layer_norm": ad.layer_norm,
    "neg": lambda x: -x,
    "transpose": ad.transpose,
    "sum_axis0": lambda x: ad.sum(x, axis=0),
    "mean_keep": lambda x: ad.mean(x, axis=-1, keepdims=True),
    "dropout": lambda x: ad.dropout(x, 0.3, seed=5),
}


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, shape):
    rng = np.random.default_rng(hash((name, shape)) % 2**32)
    # keep relu inputs away from the kink
    x = _leaf(rng, shape)
    if name == "relu":
        x.data[np.abs(x.data) < 0.05] = 0.5
    proj = rng.normal(size=UNARY[name](x).shape)
    _check(lambda: ad.sum(UNARY[name](x) * Tensor(proj)), [x])


@pytest.mark.parametrize("shape_a, shape_b", [((3,), (3,)), ((2, 4), (4,)), ((3, 1, 4), (2, 1))])
@pytest.mark.parametrize("op", ["add", "mul", "sub"])
def test_binary_broadcast_gradients(op, shape_a, shape_b):
    rng = np.random.default_rng(7)
    a, b = _leaf(rng, shape_a), _leaf(rng, shape_b)
    f = {"add": ad.add, "mul": ad.mul, "sub": lambda x, y: x - y}[op]
    proj = Tensor(rng.normal(size=f(a, b).shape))
    _check(lambda: ad.sum(f(a, b) * proj), [a, b])


@pytest.mark.parametrize("sa, sb", [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((2, 3, 4), (2, 4, 1))])
def test_matmul_gradients(sa, sb):
    rng = np.random.default_rng(11)
    a, b = _leaf(rng, sa), _leaf(rng, sb)
    proj = Tensor(rng.normal(size=(a.data @ b.data).shape))
    _check(lambda: ad.sum(ad.matmul(a, b) * proj), [a, b])


@pytest.mark.parametrize("shape", [(5, 3), (4, 2, 3), (6, 1)])
def test_gather_ops(shape):
    rng = np.random.default_rng(3)
    x = _leaf(rng, shape)
    idx = rng.integers(0, shape[0], size=(4, 3))
    proj = Tensor(rng.normal(size=(4, 3) + shape[1:]))
    _check(lambda: ad.sum(ad.row_gather(x, idx) * proj), [x])
    _check(lambda: ad.sum(ad.take(x, slice(1, None)) * Tensor(np.ones(x.data[1:].shape))), [x])


@pytest.mark.parametrize("lead", [(4,), (2, 3), (3, 2, 2)])
def test_weighted_gather_gradients(lead):
    rng = np.random.default_rng(13)
    values = _leaf(rng, (6, 3))
    index = rng.integers(0, 6, size=lead + (5,))
    weights = _leaf(rng, lead + (5,))
    proj = Tensor(rng.normal(size=lead + (3,)))
    _check(lambda: ad.sum(ad.weighted_gather(values, index, weights) * proj), [values, weights])


def test_weighted_gather_forward(rng):
    values = rng.normal(size=(5, 2))
    index = np.array([[0, 4, 4], [2, 1, 0]])
    weights = rng.normal(size=(2, 3))
    out = ad.weighted_gather(Tensor(values), index, Tensor(weights)).data
    expected = np.einsum("nw,nwd->nd", weights, values[index])
    np.testing.assert_allclose(out, expected, atol=1e-14)


@pytest.mark.parametrize("shape", [(2, 3), (3, 4), (5, 2)])
def test_concat_reshape_gradients(shape):
    rng = np.random.default_rng(17)
    a, b = _leaf(rng, shape), _leaf(rng, shape)
    proj = Tensor(rng.normal(size=(shape[0] * shape[1] * 2,)))
    _check(lambda: ad.sum(ad.reshape(ad.concat([a, b], axis=0), (-1,)) * proj), [a, b])


@pytest.mark.parametrize("n, c", [(4, 3), (6, 2), (5, 5)])
def test_cross_entropy_gradients(n, c):
    rng = np.random.default_rng(19)
    logits = _leaf(rng, (n, c))
    labels = rng.integers(0, c, n)
    ids = np.array([0, 2, n - 1])
    _check(lambda: ad.cross_entropy_masked(logits, labels, ids), [logits])


def test_cross_entropy_value():
    logits = Tensor(np.log(np.array([[0.25, 0.75], [0.5, 0.5]])))
    loss = ad.cross_entropy_masked(logits, [1, 0], [0, 1])
    assert float(loss.data) == pytest.approx(-(np.log(0.75) + np.log(0.5)) / 2, abs=1e-12)


def test_composed_graph_gradient(rng):
    x = _leaf(rng, (4, 3))
    w1 = _leaf(rng, (3, 5))
    w2 = _leaf(rng, (5, 2))
    labels = np.array([0, 1, 1, 0])

    def f():
        h = ad.tanh(ad.matmul(x, w1))
        h = ad.layer_norm(h)
        logits = ad.matmul(h, w2) + 0.1
        return ad.cross_entropy_masked(logits, labels, np.arange(4))

    _check(f, [x, w1, w2])


def test_shared_subexpression(rng):
    x = _leaf(rng, (3,))

    def f():
        y = ad.exp(x)
        return ad.sum(y * y + y)

    _check(f, [x])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_softmax_rows_sum_to_one(n, m, seed):
    x = np.random.default_rng(seed).normal(scale=30, size=(n, m))
    s = ad.softmax(Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert (s >= 0).all()


def test_softmax_shift_invariant(rng):
    x = rng.normal(size=(3, 4))
    np.testing.assert_allclose(ad.softmax(Tensor(x)).data, ad.softmax(Tensor(x + 100.0)).data, atol=1e-14)


def test_matmul_identity(rng):
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(4)), Tensor(x)).data, x)


def test_matmul_shape_error():
    with pytest.raises(ValueError, match="incompatible"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_add_shape_error():
    with pytest.raises(ValueError, match="incompatible"):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


class TestDropout:
    def test_same_seed_same_mask(self, rng):
        x = Tensor(np.ones((20, 10)))
        a = ad.dropout(x, 0.5, seed=9).data
        b = ad.dropout(x, 0.5, seed=9).data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, ad.dropout(x, 0.5, seed=10).data)

    def test_rate_zero_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        assert ad.dropout(x, 0.0, seed=1) is x

    def test_eval_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        assert ad.dropout(x, 0.5, seed=1, training=False) is x

    def test_inverted_scaling(self):
        y = ad.dropout(Tensor(np.ones(10000)), 0.25, seed=0).data
        assert set(np.unique(y).tolist()) <= {0.0, 1 / 0.75}
        assert abs(y.mean() - 1.0) < 0.03

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            ad.dropout(Tensor(np.ones(2)), 1.0, seed=0)


def test_no_grad_builds_no_graph(rng):
    x = _leaf(rng, (3,))
    with no_grad():
        y = ad.exp(x)
    assert not y.requires_grad and y._parents == ()


def test_backward_requires_scalar(rng):
    x = _leaf(rng, (3,))
    with pytest.raises(RuntimeError):
        ad.exp(x).backward()


class TestAdam:
    def test_zero_gradient_no_op(self, rng):
        p = {"w": _leaf(rng, (3, 2))}
        before = p["w"].data.copy()
        opt = Adam(p, lr=0.1)
        opt.step()
        np.testing.assert_array_equal(p["w"].data, before)

    def test_first_step_is_lr_sign(self, rng):
        p = {"w": Tensor(np.zeros(4), requires_grad=True)}
        p["w"].grad = np.array([3.0, -0.2, 1e3, -7.0])
        Adam(p, lr=0.01).step()
        np.testing.assert_allclose(p["w"].data, -0.01 * np.sign([3.0, -0.2, 1e3, -7.0]), rtol=1e-6)

    def test_constant_gradient_steps(self):
        p = {"w": Tensor(np.zeros(2), requires_grad=True)}
        opt = Adam(p, lr=0.01)
        for _ in range(5):
            p["w"].grad = np.array([2.0, -2.0])
            opt.step()
        np.testing.assert_allclose(p["w"].data, [-0.05, 0.05], rtol=1e-6)

    def test_quadratic_converges(self):
        target = np.array([0.5, -0.3, 0.2])
        p = {"w": Tensor(np.zeros(3), requires_grad=True)}
        opt = Adam(p, lr=0.01)
        for _ in range(500):
            opt.zero_grad()
            d = p["w"] - Tensor(target)
            ad.sum(d * d).backward()
            opt.step()
        assert np.max(np.abs(p["w"].data - target)) < 1e-3

    def test_decoupled_weight_decay(self):
        p = {"w": Tensor(np.full(2, 2.0), requires_grad=True)}
        Adam(p, lr=0.1, weight_decay=0.5).step()
        np.testing.assert_allclose(p["w"].data, 2.0 * (1 - 0.05))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_gradient_names_parameter(self, bad):
        p = {"enc": Tensor(np.zeros(2), requires_grad=True), "cls": Tensor(np.zeros(2), requires_grad=True)}
        p["cls"].grad = np.array([1.0, bad])
        before = p["enc"].data.copy()
        with pytest.raises(NonFiniteGradient, match="cls"):
            Adam(p).step()
        np.testing.assert_array_equal(p["enc"].data, before)


def test_checkpoint_roundtrip(tmp_path, rng):
    params = {"a.w": Tensor(rng.normal(size=(3, 4))), "b": Tensor(rng.normal(size=(5,))), "s": Tensor(2.5)}
    save_params(params, tmp_path / "m.ckpt")
    loaded = load_params(tmp_path / "m.ckpt")
    assert sorted(loaded) == sorted(params)
    for k, v in params.items():
        np.testing.assert_array_equal(loaded[k], v.data)
        assert loaded[k].shape == v.shape


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"garbage")
    with pytest.raises(ValueError):
        load_params(tmp_path / "x")


def test_training_loop_deterministic():
    def run():
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(8, 3)))
        w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        labels = rng.integers(0, 2, 8)
        opt = Adam({"w": w}, lr=0.05)
        losses = []
        for epoch in range(10):
            opt.zero_grad()
            h = ad.dropout(ad.matmul(x, w), 0.2, seed=epoch)
            loss = ad.cross_entropy_masked(h, labels, np.arange(8))
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        return losses

    assert run() == run()
