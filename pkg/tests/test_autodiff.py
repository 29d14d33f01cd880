import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fd_grad
from mjae import autodiff as ad
from mjae.autodiff import ShapeError, TapeError, Tensor


def test_matmul_shape_rule():
    out = ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
    assert out.shape == (2, 4)


def test_shape_errors_name_primitive():
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(ShapeError, match="reshape"):
        ad.reshape(Tensor(np.ones(6)), (4, 4))
    with pytest.raises(ShapeError, match="concat"):
        ad.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4)))], axis=0)


def test_rank_cap():
    with pytest.raises(ShapeError, match="rank"):
        Tensor(np.zeros((2, 2, 2, 2, 2)))


def test_softmax_rows_normalized(rng):
    out = ad.softmax(Tensor(rng.standard_normal((5, 7))))
    assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-12


def test_sum_square_gradient_exact(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    ad.backward(ad.sum_(ad.square(x)))
    assert np.array_equal(x.grad, 2.0 * x.data)


def test_sum_gradient_ones(rng):
    x = Tensor(rng.standard_normal(6), requires_grad=True)
    ad.backward(ad.sum_(x))
    assert np.array_equal(x.grad, np.ones(6))


def test_backward_contracts(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    loss = ad.sum_(ad.square(x))
    ad.backward(loss)
    with pytest.raises(TapeError, match="consumed"):
        ad.backward(loss)
    with pytest.raises(TapeError, match="scalar"):
        ad.backward(ad.square(Tensor(np.ones(3), requires_grad=True)))
    with pytest.raises(TypeError):
        ad.backward(np.ones(1))


def test_grad_accumulates_over_reuse(rng):
    x = Tensor(np.array(3.0), requires_grad=True)
    # y = x * x via two references to the same leaf
    ad.backward(ad.mul(x, x))
    assert abs(float(x.grad) - 6.0) < 1e-12


def test_broadcast_unbroadcast(rng):
    x = Tensor(rng.standard_normal((1, 4)), requires_grad=True)
    y = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    ad.backward(ad.sum_(ad.mul(ad.broadcast(x, (3, 4)), y)))
    assert x.grad.shape == (1, 4)
    assert np.allclose(x.grad, y.data.sum(axis=0, keepdims=True))


# -- finite-difference gradient checks ------------------------------------

def _check(builder, x0, tol=1e-6):
    """Compare autodiff gradients against the conftest FD oracle."""
    x = Tensor(x0.copy(), requires_grad=True)
    ad.backward(builder(x))
    numeric = fd_grad(lambda a: float(builder(Tensor(a)).data), x0.copy())
    scale = max(np.abs(numeric).max(), 1.0)
    assert np.abs(x.grad - numeric).max() / scale < tol


def _smooth(rng, shape):
    # keep probes away from relu/abs kinks
    base = rng.standard_normal(shape)
    return base + 0.25 * np.sign(base)


CASES = {
    "add": lambda x, c: ad.sum_(ad.square(ad.add(x, Tensor(c)))),
    "sub": lambda x, c: ad.sum_(ad.square(ad.sub(Tensor(c), x))),
    "mul": lambda x, c: ad.sum_(ad.mul(x, Tensor(c))),
    "div": lambda x, c: ad.sum_(ad.div(Tensor(c), ad.add(ad.square(x), Tensor(1.0)))),
    "neg": lambda x, c: ad.sum_(ad.mul(ad.neg(x), Tensor(c))),
    "exp": lambda x, c: ad.sum_(ad.exp(ad.mul(x, Tensor(0.3)))),
    "log": lambda x, c: ad.sum_(ad.log(ad.add(ad.square(x), Tensor(1.0)))),
    "square": lambda x, c: ad.sum_(ad.square(x)),
    "sqrt": lambda x, c: ad.sum_(ad.sqrt(ad.add(ad.square(x), Tensor(1.0)))),
    "abs": lambda x, c: ad.sum_(ad.abs_(x)),
    "relu": lambda x, c: ad.sum_(ad.relu(x)),
    "silu": lambda x, c: ad.sum_(ad.silu(x)),
    "softmax": lambda x, c: ad.sum_(ad.mul(ad.softmax(x), Tensor(c))),
    "mean": lambda x, c: ad.mean(ad.square(x)),
    "sum_axis": lambda x, c: ad.sum_(ad.square(ad.sum_(x, axis=0))),
    "mean_axis": lambda x, c: ad.sum_(ad.square(ad.mean(x, axis=1))),
    "reshape": lambda x, c: ad.sum_(ad.square(ad.reshape(x, (x.data.size,)))),
    "transpose": lambda x, c: ad.sum_(ad.mul(ad.transpose(x), Tensor(c.T))),
    "slice": lambda x, c: ad.sum_(ad.square(x[1:, :2])),
    "broadcast": lambda x, c: ad.sum_(ad.square(ad.broadcast(x, (5,) + x.shape))),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients(name, rng):
    for probe in range(5):
        x0 = _smooth(rng, (3, 4))
        c = rng.standard_normal((3, 4))
        _check(lambda x, c=c: CASES[name](x, c), x0)


def test_matmul_gradient(rng):
    w = rng.standard_normal((4, 2))
    _check(lambda x: ad.sum_(ad.square(ad.matmul(x, Tensor(w)))), rng.standard_normal((3, 4)))


def test_concat_gradient(rng):
    other = rng.standard_normal((2, 4))
    _check(lambda x: ad.sum_(ad.square(ad.concat([x, Tensor(other)], axis=0))),
           rng.standard_normal((3, 4)))


def test_composite_mlp_gradient(rng):
    """3-layer composite network against finite differences."""
    w1 = rng.standard_normal((4, 8)) / 2.0
    w2 = rng.standard_normal((8, 8)) / np.sqrt(8)
    w3 = rng.standard_normal((8, 1)) / np.sqrt(8)
    x = rng.standard_normal((5, 4))

    def net(w1t):
        h = ad.silu(ad.matmul(Tensor(x), w1t))
        h = ad.silu(ad.matmul(h, Tensor(w2)))
        return ad.mean(ad.square(ad.matmul(h, Tensor(w3))))

    for _ in range(5):
        _check(net, rng.standard_normal((4, 8)) / 2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_mul_add_chain_gradients_property(seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((2, 3))
    b = r.standard_normal((2, 3))
    x = Tensor(a.copy(), requires_grad=True)
    ad.backward(ad.sum_(ad.mul(ad.add(x, Tensor(b)), x)))
    # d/dx sum((x+b)x) = 2x + b
    assert np.abs(x.grad - (2 * a + b)).max() < 1e-10


def test_no_grad_path_is_cheap(rng):
    x = Tensor(rng.standard_normal((3, 3)))
    out = ad.silu(ad.matmul(x, x))
    assert not out.requires_grad
    ad.backward(ad.sum_(out))  # no-op, but legal
