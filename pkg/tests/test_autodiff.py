import numpy as np
import pytest

from pdgm import autodiff as ad


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        g[idx] = (f(xp) - f(xm)) / (2 * eps)
    return g


def check(fn, *shapes, positive=False, seed=0):
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(0.5, 2.0, s) if positive else rng.standard_normal(s) for s in shapes]
    params = [ad.parameter(x) for x in xs]
    grads = ad.grad(ad.tsum(fn(*params)), params)
    for i, x in enumerate(xs):
        def scalar(xi, i=i):
            args = list(xs)
            args[i] = xi
            return float(np.sum(ad.value(fn(*[ad.Tensor(a) for a in args]))))
        assert np.allclose(grads[i], numeric_grad(scalar, x), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("fn,shapes,positive", [
    (lambda a, b: a + b, [(3, 4), (4,)], False),
    (lambda a, b: a - b * a, [(3, 4), (3, 1)], False),
    (lambda a, b: a / b, [(2, 3), (2, 3)], True),
    (lambda a: a ** 3, [(5,)], False),
    (lambda a, b: a @ b, [(3, 4), (4, 2)], False),
    (lambda a: ad.tanh(a) * ad.sigmoid(a), [(6,)], False),
    (lambda a: ad.exp(a) + ad.log(a) + ad.sqrt(a), [(4,)], True),
    (lambda a: ad.sin(a) * ad.cos(a), [(4,)], False),
    (lambda a: ad.absolute(a), [(7,)], False),
    (lambda a: ad.transpose(a) @ a, [(3, 2)], False),
    (lambda a: ad.reshape(a, (6,)) * np.arange(6.0), [(2, 3)], False),
    (lambda a: ad.mean(a, axis=0) * ad.tsum(a, axis=1, keepdims=True), [(3, 3)], False),
    (lambda a: a[1:, ::2] * a[:2, 1:2], [(3, 4)], False),
    (lambda a: a[np.array([0, 0, 2])], [(3, 2)], False),
    (lambda a, b: ad.concatenate([a, b], axis=1) ** 2, [(2, 2), (2, 3)], False),
    (lambda a, b: ad.stack([a, b], axis=0) * np.array([[1.0], [2.0]]), [(3,), (3,)], False),
    (lambda a, b: ad.where(np.array([True, False, True]), a * a, b), [(3,), (3,)], False),
])
def test_vjps_match_finite_differences(fn, shapes, positive):
    check(fn, *shapes, positive=positive)


def test_shared_subgraph_accumulates():
    x = ad.parameter(np.array([1.5, -0.5]))
    y = ad.tanh(x)
    z = ad.tsum(y * y + 3.0 * y)
    (g,) = ad.grad(z, [x])
    t = np.tanh([1.5, -0.5])
    assert np.allclose(g, (2 * t + 3) * (1 - t**2))


def test_grad_needs_scalar_root():
    x = ad.parameter(np.ones(3))
    with pytest.raises(ValueError):
        ad.grad(x * 2.0, [x])


def test_unreached_leaf_gets_zero():
    x, y = ad.parameter(np.ones(2)), ad.parameter(np.ones(3))
    gx, gy = ad.grad(ad.tsum(x), [x, y])
    assert np.array_equal(gx, np.ones(2)) and np.array_equal(gy, np.zeros(3))


def test_numpy_operands_defer_to_tensor():
    x = ad.parameter(np.ones(2))
    out = np.array([2.0, 3.0]) * x
    assert isinstance(out, ad.Tensor) and np.array_equal(out.data, [2.0, 3.0])
