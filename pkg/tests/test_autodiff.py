import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import hypermux.autodiff as ad


RNG = np.random.default_rng(12345)


def scalarize(expr):
    return ad.tsum(expr) if ad.val(expr).ndim else expr


# one probe per primitive: name -> (builder(leaves) -> scalar Tensor, inputs)
def _mat(shape, lo=-1.0, hi=1.0, rng=None):
    return (rng or RNG).uniform(lo, hi, size=shape)


PAT = ad.SparsePattern(np.array([0, 0, 1, 2, 3]), np.array([0, 2, 1, 2, 0]), (4, 3))

PRIMITIVE_PROBES = {
    "add": (lambda v: ad.tsum(ad.mul(ad.add(v["a"], v["b"]), v["a"])),
            {"a": _mat((3, 4)), "b": _mat((3, 4))}),
    "add_broadcast": (lambda v: ad.tsum(ad.mul(ad.add(v["a"], v["b"]), v["a"])),
                      {"a": _mat((3, 4)), "b": _mat((1, 4))}),
    "sub": (lambda v: ad.tsum(ad.mul(ad.sub(v["a"], v["b"]), v["b"])),
            {"a": _mat((3, 4)), "b": _mat((3, 4))}),
    "mul_broadcast": (lambda v: ad.tsum(ad.mul(v["a"], v["b"])),
                      {"a": _mat((3, 4)), "b": _mat((3, 1))}),
    "div": (lambda v: ad.tsum(ad.div(v["a"], v["b"])),
            {"a": _mat((3, 4)), "b": _mat((3, 4), 1.5, 2.5)}),
    "neg": (lambda v: ad.tsum(ad.mul(ad.neg(v["a"]), v["a"])), {"a": _mat((3, 4))}),
    "power": (lambda v: ad.tsum(ad.power(v["a"], -0.5)), {"a": _mat((3, 4), 0.5, 2.0)}),
    "matmul": (lambda v: ad.tsum(ad.matmul(v["a"], v["b"])),
               {"a": _mat((3, 4)), "b": _mat((4, 2))}),
    "matvec": (lambda v: ad.tsum(ad.matmul(v["a"], v["b"])),
               {"a": _mat((3, 4)), "b": _mat((4,))}),
    "dot": (lambda v: ad.matmul(v["a"], v["b"]), {"a": _mat((4,)), "b": _mat((4,))}),
    "exp": (lambda v: ad.tsum(ad.exp(v["a"])), {"a": _mat((3, 4))}),
    "log": (lambda v: ad.tsum(ad.log(v["a"])), {"a": _mat((3, 4), 0.5, 2.0)}),
    "sqrt": (lambda v: ad.tsum(ad.sqrt(v["a"])), {"a": _mat((3, 4), 0.5, 2.0)}),
    "tanh": (lambda v: ad.tsum(ad.tanh(v["a"])), {"a": _mat((3, 4), -2, 2)}),
    "arctanh": (lambda v: ad.tsum(ad.arctanh(v["a"])), {"a": _mat((3, 4), -0.8, 0.8)}),
    "sinh": (lambda v: ad.tsum(ad.sinh(v["a"])), {"a": _mat((3, 4), -2, 2)}),
    "cosh": (lambda v: ad.tsum(ad.cosh(v["a"])), {"a": _mat((3, 4), -2, 2)}),
    "arcosh": (lambda v: ad.tsum(ad.arcosh(v["a"])), {"a": _mat((3, 4), 1.5, 3.0)}),
    "sigmoid": (lambda v: ad.tsum(ad.sigmoid(v["a"])), {"a": _mat((3, 4), -3, 3)}),
    "relu": (lambda v: ad.tsum(ad.mul(ad.relu(v["a"]), v["a"])),
             {"a": _mat((3, 4)) + 0.05}),
    "leaky_relu": (lambda v: ad.tsum(ad.mul(ad.leaky_relu(v["a"], 0.2), v["a"])),
                   {"a": _mat((3, 4)) + 0.05}),
    "softmax": (lambda v: ad.tsum(ad.mul(ad.softmax(v["a"], axis=-1), v["b"])),
                {"a": _mat((3, 4)), "b": _mat((3, 4))}),
    "sum_axis": (lambda v: ad.tsum(ad.mul(ad.tsum(v["a"], axis=0, keepdims=True),
                                          v["b"])),
                 {"a": _mat((3, 4)), "b": _mat((1, 4))}),
    "mean": (lambda v: ad.tmean(v["a"]), {"a": _mat((3, 4))}),
    "row_norm": (lambda v: ad.tsum(ad.row_norm(v["a"])), {"a": _mat((3, 4)) + 2.0}),
    "concat": (lambda v: ad.tsum(ad.mul(ad.concat([v["a"], v["b"]], axis=1),
                                        ad.concat([v["b"], v["a"]], axis=1))),
               {"a": _mat((3, 2)), "b": _mat((3, 2))}),
    "transpose": (lambda v: ad.tsum(ad.matmul(ad.transpose(v["a"]), v["a"])),
                  {"a": _mat((3, 4))}),
    "reshape": (lambda v: ad.tsum(ad.mul(ad.reshape(v["a"], (2, 6)), v["b"])),
                {"a": _mat((3, 4)), "b": _mat((2, 6))}),
    "take_row": (lambda v: ad.tsum(ad.take_row(v["a"], 1)), {"a": _mat((3, 4))}),
    "slice_cols": (lambda v: ad.tsum(ad.slice_cols(v["a"], 1, 3)), {"a": _mat((3, 4))}),
    "slice_rows": (lambda v: ad.tsum(ad.slice_rows(v["a"], 1, 3)), {"a": _mat((4, 3))}),
    "gather_nd": (lambda v: ad.tsum(ad.gather_nd(v["a"], [0, 1, 2], [1, 0, 2])),
                  {"a": _mat((3, 4))}),
    "scatter_nd": (lambda v, _w=_mat((3, 4)): ad.tsum(ad.mul(
        ad.scatter_nd(v["vals"], [0, 1, 2], [1, 0, 2], (3, 4)), _w)),
        {"vals": _mat((3,))}),
    "spmm": (lambda v: ad.tsum(ad.spmm(PAT, v["vals"], v["x"])),
             {"vals": _mat((5,)), "x": _mat((3, 2))}),
    "block_transpose": (lambda v, _w=_mat((6, 3)): ad.tsum(ad.mul(
        ad.block_transpose(v["a"], 3), _w)),
        {"a": _mat((6, 3))}),
    "block_matmul": (lambda v: ad.tsum(ad.block_matmul(v["x"], [v["w0"], v["w1"]], 3)),
                     {"x": _mat((6, 4)), "w0": _mat((4, 2)), "w1": _mat((4, 2))}),
    "block_weighted_sum": (lambda v: ad.tsum(ad.block_weighted_sum(v["x"], v["c"], 3)),
                           {"x": _mat((6, 4)), "c": _mat((1, 2))}),
    "normalize_blocks": (lambda v, _w=_mat((6, 3)): ad.tsum(ad.mul(
        ad.normalize_blocks(v["a"], 3), _w)),
        {"a": np.abs(_mat((6, 3)))}),
    "where_mask": (lambda v: ad.tsum(ad.where_mask(
        np.array([[True, False], [False, True]]), v["a"], v["b"])),
        {"a": _mat((2, 2)), "b": _mat((2, 2))}),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_PROBES))
def test_primitive_grad_check(name):
    build, inputs = PRIMITIVE_PROBES[name]
    errs = []
    for trial in range(10):
        rng = np.random.default_rng(1000 * hash(name) % 2**31 + trial)
        jitter = {k: v + 0.01 * rng.uniform(-1, 1, size=np.shape(v))
                  for k, v in inputs.items()}
        errs.append(ad.grad_check(build, jitter, epsilon=1e-6, rng=rng))
    assert max(errs) < 1e-5


def test_softmax_weighted_sum_gradient_tight():
    # the aggregation core: relu(row_softmax(logits) @ stacked constants)
    rng = np.random.default_rng(77)
    stacked = rng.uniform(0.0, 1.0, size=(4, 25))
    weights = rng.normal(size=(2, 25))

    def fn(v):
        mixed = ad.relu(ad.matmul(ad.softmax(v["logits"], axis=-1),
                                  ad.constant(stacked)))
        return ad.tsum(ad.mul(mixed, weights))

    assert ad.grad_check(fn, {"logits": rng.normal(size=(2, 4))},
                         epsilon=1e-6) < 1e-6


def test_shape_rule_matmul():
    out = ad.matmul(ad.leaf(np.ones((2, 3))), ad.leaf(np.ones((3, 2))))
    assert out.shape == (2, 2)
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(ad.leaf(np.ones((2, 3))), ad.leaf(np.ones((2, 3))))


def test_softmax_of_zeros_is_uniform():
    out = ad.softmax(np.zeros(3), axis=-1)
    assert np.allclose(out, [1 / 3, 1 / 3, 1 / 3])


def test_sigmoid_at_zero():
    assert ad.sigmoid(np.array([0.0]))[0] == pytest.approx(0.5)


def test_scalar_square_gradient():
    x = ad.leaf(np.array(3.0))
    ad.backward(ad.mul(x, x))
    assert x.grad == pytest.approx(6.0)


def test_linear_map_gradient_matches_columns_sums():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 4))
    w = ad.leaf(rng.normal(size=(4, 3)))
    ad.backward(ad.tsum(ad.matmul(ad.constant(a), w)))
    expected = np.repeat(a.sum(axis=0)[:, None], 3, axis=1)
    assert np.allclose(w.grad, expected, atol=1e-12)
    err = ad.grad_check(lambda v: ad.tsum(ad.matmul(ad.constant(a), v["w"])),
                        {"w": rng.normal(size=(4, 3))}, epsilon=1e-6)
    assert err < 1e-9  # exact for linear maps


def test_tanh_gradient_at_zero_is_one():
    x = ad.leaf(np.zeros(1))
    ad.backward(ad.tsum(ad.tanh(x)))
    assert x.grad[0] == pytest.approx(1.0)


def test_backward_linear_in_seed():
    rng = np.random.default_rng(2)
    x = ad.leaf(rng.normal(size=(3, 3)))
    y = ad.tanh(ad.matmul(x, ad.constant(rng.normal(size=(3, 3)))))
    seed = rng.normal(size=(3, 3))
    ad.backward(y, seed)
    g1 = x.grad.copy()
    ad.backward(y, 2.5 * seed)
    assert np.allclose(x.grad, 2.5 * g1, atol=1e-12)


def test_off_path_leaf_gets_zero_gradient():
    x = ad.leaf(np.ones((2, 2)))
    unused = ad.leaf(np.ones((2, 2)))
    out = ad.tsum(ad.mul(x, x))
    grads = ad.gradients(out, [x, unused])
    assert np.allclose(grads[0], 2.0)
    assert np.allclose(grads[1], 0.0)


def test_backward_seed_shape_mismatch():
    x = ad.leaf(np.ones((2, 2)))
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.mul(x, x), np.ones(3))


def test_grad_check_requires_scalar():
    with pytest.raises(ValueError, match="scalar"):
        ad.grad_check(lambda v: ad.mul(v["a"], v["a"]), {"a": np.ones((2, 2))})


def test_spmm_const_matches_dense():
    import scipy.sparse as sps
    rng = np.random.default_rng(3)
    dense = (rng.random((4, 4)) < 0.5).astype(float)
    dense = np.triu(dense) + np.triu(dense, 1).T
    s = sps.csr_matrix(dense)
    x = ad.leaf(rng.normal(size=(4, 3)))
    out = ad.spmm_const(s, s.T.tocsr(), x)
    assert np.allclose(out.value, dense @ x.value)
    seed = rng.normal(size=(4, 3))
    ad.backward(out, seed)
    assert np.allclose(x.grad, dense.T @ seed)


def test_evaluation_is_deterministic():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(6, 6))
    runs = [ad.val(ad.softmax(ad.tanh(ad.matmul(ad.constant(a), ad.constant(a))),
                              axis=-1))
            for _ in range(2)]
    assert np.array_equal(runs[0], runs[1])


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_clip_straight_through(seed):
    rng = np.random.default_rng(seed)
    x = ad.leaf(rng.normal(size=(3,)) * 3.0)
    ad.backward(ad.tsum(ad.clip(x, -1.0, 1.0)))
    assert np.allclose(x.grad, 1.0)  # adjoint ignores the clamp


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_shared_gradient_buffers_never_alias(seed):
    rng = np.random.default_rng(seed)
    a0 = rng.normal(size=(3, 3))
    b0 = rng.normal(size=(3, 3))

    def fn(v):
        s = ad.add(v["a"], v["b"])  # hands the same adjoint to both parents
        return ad.tsum(ad.add(ad.mul(s, v["a"]), s))

    assert ad.grad_check(fn, {"a": a0, "b": b0}, epsilon=1e-6) < 1e-7
