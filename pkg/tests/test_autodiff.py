import math

import numpy as np
import pytest

from urtf import autodiff as ad
from urtf.autodiff import NotScalar, ParamStore, ShapeMismatch, Tape, constant, finite_diff_check, grad, tensor
from urtf.checks import primitive_cases, quadratic_maml_error, run_suite, second_order, shrunken_outer_case


def test_square_and_cube():
    x = tensor([[3.0]])
    (g,) = grad(ad.sum(ad.mul(x, x)), [x])
    assert g.item() == 6.0

    x = tensor([[2.0]])
    cube = ad.sum(ad.mul(ad.mul(x, x), x))
    (g,) = grad(cube, [x], higher_order=True)
    assert g.item() == 12.0
    (gg,) = grad(ad.sum(g), [x])
    assert gg.item() == 12.0


def test_third_derivative():
    x = tensor([[1.5]])
    y = ad.sum(ad.exp(ad.scale(x, 2.0)))
    for k in range(3):
        (y,) = grad(y, [x], higher_order=True)
        y = ad.sum(y)
    assert y.item() == pytest.approx(8 * math.exp(3.0))


def test_uniform_cross_entropy_is_log_v():
    for v in (2, 7, 50):
        logits = tensor(np.zeros((4, v)))
        assert ad.cross_entropy(logits, [0, 1, 1, v - 1]).item() == pytest.approx(math.log(v), abs=1e-15)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(3, 5))
    target = [4, 0, 2]
    logits = tensor(z)
    (g,) = grad(ad.cross_entropy(logits, target), [logits])
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    expected = p.copy()
    expected[np.arange(3), target] -= 1
    np.testing.assert_allclose(g.data, expected / 3, atol=1e-14)


def test_matmul_shape():
    a, b = tensor(np.ones((2, 3))), tensor(np.ones((3, 1)))
    assert ad.matmul(a, b).shape == (2, 1)
    with pytest.raises(ShapeMismatch):
        ad.matmul(a, a)
    with pytest.raises(ShapeMismatch):
        ad.add(a, b)


def test_loss_must_be_scalar():
    a = tensor(np.ones((2, 2)))
    with pytest.raises(NotScalar):
        grad(a, [a])


@pytest.mark.parametrize("name", sorted(primitive_cases()))
def test_every_primitive_against_finite_differences(name):
    f, params = primitive_cases()[name]
    assert finite_diff_check(f, params) < 1e-6
    assert finite_diff_check(second_order(f, params), params) < 1e-6


def test_linear_function_is_exact():
    rng = np.random.default_rng(2)
    w = constant(rng.normal(size=(3, 4)))
    params = ParamStore.from_arrays({"x": rng.normal(size=(3, 4))})
    assert finite_diff_check(lambda p: ad.sum(ad.mul(p["x"], w)), params) < 1e-10


def test_epsilon_must_be_positive():
    params = ParamStore.from_arrays({"x": np.ones((1, 1))})
    with pytest.raises(ValueError):
        finite_diff_check(lambda p: ad.sum(p["x"]), params, epsilon=0)


def test_gradient_of_a_sum_is_the_sum_of_gradients():
    rng = np.random.default_rng(3)
    params = ParamStore.from_arrays({"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(3, 2))})

    def f(p):
        return ad.sum(ad.exp(ad.matmul(p["a"], p["b"])))

    def g(p):
        return ad.cross_entropy(ad.matmul(p["a"], p["b"]), [0, 1])

    both = grad(ad.add(f(params), g(params)), params)
    gf, gg = grad(f(params), params), grad(g(params), params)
    for k in params:
        np.testing.assert_allclose(both[k].data, gf[k].data + gg[k].data, rtol=1e-12)


def test_replay_is_bit_identical():
    f, params = shrunken_outer_case("second_order")
    first = f(params)
    second = f(params)
    assert first.data.tobytes() == second.data.tobytes()
    g1, g2 = grad(first, params), grad(second, params)
    for k in params:
        assert g1[k].data.tobytes() == g2[k].data.tobytes()
    assert len(Tape(first)) == len(Tape(second))


def test_tape_is_topological():
    x = tensor([[1.0, 2.0]])
    y = ad.sum(ad.mul(ad.exp(x), x))
    order = {node.id: k for k, node in enumerate(Tape(y))}
    for node in Tape(y):
        for parent in node.parents:
            if parent.id in order:
                assert order[parent.id] < order[node.id]


def test_no_record_blocks_gradients():
    x = tensor([[2.0]])
    with ad.no_record():
        y = ad.sum(ad.mul(x, x))
    assert not y.requires_grad


def test_gradients_are_plain_unless_asked():
    x = tensor([[2.0]])
    (g,) = grad(ad.sum(ad.mul(x, x)), [x])
    assert not g.requires_grad


def test_sgd_is_functional():
    params = ParamStore.from_arrays({"x": np.array([[1.0, -1.0]])})
    before = params["x"].data.copy()
    grads = grad(ad.sum(ad.mul(params["x"], params["x"])), params)
    new = params.sgd(grads, 0.25)
    np.testing.assert_array_equal(params["x"].data, before)
    np.testing.assert_allclose(new["x"].data, [[0.5, -0.5]])


def test_outer_loss_gradients():
    for mode in ("second_order", "simple"):
        f, params = shrunken_outer_case(mode)
        assert params.n_params <= 50
        assert finite_diff_check(f, params) < 1e-3


def test_quadratic_closed_form():
    assert quadratic_maml_error() < 1e-8
    assert quadratic_maml_error(alpha=0.37, dim=9, seed=4) < 1e-8


def test_suite_passes():
    results = run_suite()
    assert results and all(r.passed for r in results), [r for r in results if not r.passed]
