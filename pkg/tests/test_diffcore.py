import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavehdnn import diffcore as dc
from wavehdnn.diffcore import Tape, TapeError, Variable, check_gradients
from wavehdnn.hypergraph import ShapeError, SparseMatrix


def _grad_of(fn, *values):
    tape = Tape()
    leaves = [tape.leaf(v) for v in values]
    tape.backward(fn(*leaves))
    return [leaf.grad for leaf in leaves]


class TestTape:
    def test_readme_example(self):
        tape = Tape()
        w = tape.leaf(np.ones((2, 2)))
        x = np.array([[1.0], [-2.0]])
        loss = dc.sum_all(dc.relu(w @ x))
        tape.backward(loss)
        # w @ x = [-1, -1], relu kills both rows
        np.testing.assert_array_equal(w.grad, np.zeros((2, 2)))

    def test_fan_out_accumulates(self):
        (g,) = _grad_of(lambda a: dc.sum_all(dc.add(dc.mul(a, a), a)), np.array([[3.0]]))
        assert g[0, 0] == 7.0

    def test_backward_twice_rejected(self):
        tape = Tape()
        a = tape.leaf(np.ones((1, 1)))
        loss = dc.scale(a, 2.0)
        tape.backward(loss)
        with pytest.raises(TapeError):
            tape.backward(loss)

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        a = tape.leaf(np.ones((2, 2)))
        with pytest.raises(ShapeError):
            tape.backward(dc.scale(a, 2.0))

    def test_mixing_tapes_rejected(self):
        a = Tape().leaf(np.ones((1, 1)))
        b = Tape().leaf(np.ones((1, 1)))
        with pytest.raises(TapeError):
            dc.add(a, b)

    def test_unused_leaf_gets_zero_grad(self):
        tape = Tape()
        a = tape.leaf(np.ones((1, 2)))
        b = tape.leaf(np.ones((3, 1)))
        tape.backward(dc.sum_all(a))
        np.testing.assert_array_equal(b.grad, np.zeros((3, 1)))

    def test_constant_inputs_build_no_graph(self):
        out = dc.matmul(np.eye(2), np.ones((2, 1)))
        assert isinstance(out, Variable) and not out.requires_grad

    def test_operator_overloads(self):
        tape = Tape()
        a = tape.leaf(np.array([[2.0, 3.0]]))
        loss = dc.sum_all((a * 2.0 - 1.0) @ np.ones((2, 1)))
        tape.backward(loss)
        np.testing.assert_array_equal(a.grad, [[2.0, 2.0]])

    def test_vectors_become_rows(self):
        assert Variable(np.arange(3.0)).shape == (1, 3)
        assert Variable(2.0).shape == (1, 1)


class TestOpValues:
    def test_layer_norm_of_pair(self):
        y = dc.row_layer_norm(np.array([[1.0, -1.0]]), eps=1e-5).value
        want = 1.0 / math.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(y, [[want, -want]], rtol=1e-15)

    def test_layer_norm_of_constant_row_is_zero(self):
        np.testing.assert_array_equal(dc.row_layer_norm(np.full((2, 4), 3.0)).value, 0.0)

    def test_l2_normalize_clamps_zero_row(self):
        y = dc.row_l2_normalize(np.array([[0.0, 0.0], [3.0, 4.0]])).value
        np.testing.assert_allclose(y, [[0.0, 0.0], [0.6, 0.8]])

    def test_log_sigmoid_is_stable(self):
        v = dc.log_sigmoid(np.array([[-800.0, 0.0, 800.0]])).value
        np.testing.assert_allclose(v, [[-800.0, -math.log(2), 0.0]], atol=1e-300)

    def test_logsumexp_large_inputs(self):
        v = dc.logsumexp_rows(np.array([[1000.0, 1000.0]])).value
        assert v[0, 0] == pytest.approx(1000.0 + math.log(2))

    def test_relu_derivative_at_zero_is_zero(self):
        (g,) = _grad_of(lambda a: dc.sum_all(dc.relu(a)), np.array([[0.0, 1.0, -1.0]]))
        np.testing.assert_array_equal(g, [[0.0, 1.0, 0.0]])

    def test_gather_repeated_rows_accumulates(self):
        (g,) = _grad_of(lambda a: dc.sum_all(dc.gather_rows(a, [0, 0, 2])), np.ones((3, 2)))
        np.testing.assert_array_equal(g, [[2, 2], [0, 0], [1, 1]])

    def test_scatter_add_rows(self):
        out = dc.scatter_add_rows(np.array([[1.0], [2.0], [4.0]]), [1, 1, 0], 3).value
        np.testing.assert_array_equal(out, [[4.0], [3.0], [0.0]])

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            dc.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_broadcast_error(self):
        with pytest.raises(ShapeError):
            dc.add(np.ones((2, 3)), np.ones((3, 2)))

    def test_gather_out_of_range(self):
        with pytest.raises(ShapeError):
            dc.gather_rows(np.ones((2, 2)), [2])


def _rand(rng, *shape):
    return rng.standard_normal(shape)


SPARSE = SparseMatrix.from_dense([[1.0, 0.0, 2.0], [0.0, -1.0, 0.5]])

# name -> (builder, input shapes)
OPS = {
    "matmul": (lambda a, b: dc.matmul(a, b), [(3, 4), (4, 2)]),
    "sparse": (lambda a: dc.sparse_dense_matmul(SPARSE, a), [(3, 2)]),
    "transpose": (lambda a: dc.transpose(a), [(2, 3)]),
    "add_bcast_row": (lambda a, b: dc.add(a, b), [(3, 4), (1, 4)]),
    "sub_bcast_col": (lambda a, b: dc.sub(a, b), [(3, 4), (3, 1)]),
    "mul_bcast": (lambda a, b: dc.mul(a, b), [(3, 4), (3, 1)]),
    "sigmoid": (lambda a: dc.sigmoid(a), [(2, 3)]),
    "log_sigmoid": (lambda a: dc.log_sigmoid(a), [(2, 3)]),
    "exp": (lambda a: dc.exp(a), [(2, 3)]),
    "log": (lambda a: dc.log(dc.add(dc.square(a), 1.0)), [(2, 3)]),
    "layer_norm": (lambda a: dc.row_layer_norm(a), [(3, 5)]),
    "l2_normalize": (lambda a: dc.row_l2_normalize(a), [(3, 5)]),
    "logsumexp": (lambda a: dc.logsumexp_rows(a), [(3, 5)]),
    "concat_columns": (lambda a, b: dc.concat_columns(a, b), [(3, 2), (3, 4)]),
    "concat_rows": (lambda a, b: dc.concat_rows(a, b), [(2, 3), (1, 3)]),
    "mean_over_rows": (lambda a: dc.mean_over_rows(a), [(4, 3)]),
    "gather": (lambda a: dc.gather_rows(a, [2, 0, 2]), [(3, 2)]),
    "scatter": (lambda a: dc.scatter_add_rows(a, [1, 1, 0], 4), [(3, 2)]),
    "linear_map": (lambda a: dc.linear_map(lambda x: 2.0 * x[::-1], lambda g: 2.0 * g[::-1], a),
                   [(3, 2)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_against_central_differences(name):
    build, shapes = OPS[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    params = {f"x{k}": _rand(rng, *s) for k, s in enumerate(shapes)}
    # fixed random projection so every output entry matters
    out_shape = build(*[params[k] for k in sorted(params)]).shape
    proj = _rand(rng, *out_shape)

    def loss(leaves):
        return dc.sum_all(dc.mul(build(*[leaves[k] for k in sorted(leaves)]), proj))

    report = check_gradients(loss, params, h=1e-6, tol=1e-6, samples=None)
    assert report.passed, report.max_by_param()


class TestCheckGradients:
    def test_detects_wrong_vjp(self):
        def bad_square(x):
            xv = dc._val(x)
            return dc._op(xv * xv, (x,), lambda g: (g * xv,))  # missing factor 2

        report = check_gradients(lambda p: dc.sum_all(bad_square(p["a"])),
                                 {"a": np.array([[1.0, 2.0]])}, samples=None)
        assert not report.passed
        assert report.max_rel_error == pytest.approx(0.5, rel=1e-6)

    def test_frozen_params_skipped(self):
        report = check_gradients(lambda p: dc.sum_all(dc.mul(p["a"], p["b"])),
                                 {"a": np.ones((1, 2)), "b": np.ones((1, 2))}, frozen=("b",))
        assert set(report.max_by_param()) == {"a"}

    def test_sampling_is_seeded(self):
        params = {"a": np.arange(50.0).reshape(5, 10)}
        f = lambda p: dc.sum_all(dc.square(p["a"]))  # noqa: E731
        r1 = check_gradients(f, params, samples=7, seed=4)
        r2 = check_gradients(f, params, samples=7, seed=4)
        assert [e.index for e in r1.entries] == [e.index for e in r2.entries]
        assert len(r1.entries) == 7

    def test_non_finite_loss_reported(self):
        with np.errstate(invalid="ignore"):
            report = check_gradients(lambda p: dc.log(p["a"]), {"a": np.array([[-1.0]])})
        assert report.failures and not report.passed


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8))
def test_layer_norm_output_is_standardized(row):
    x = np.array([row])
    if np.ptp(x) < 1e-3:
        return
    y = dc.row_layer_norm(x, eps=0.0).value
    assert abs(y.mean()) < 1e-9
    assert y.var() == pytest.approx(1.0, rel=1e-9)
