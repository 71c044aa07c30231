"""Tape, elementwise ops, convolution, pooling, and gather plumbing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smalldet.tensor import (NonFiniteError, Tape, Tensor, backward,
                             grad_check, ops, precision, real_dtype,
                             reset_grads, set_debug)


def _double(values):
    return Tensor(np.asarray(values, dtype=np.float64), dtype=np.float64)


class TestTensorBasics:
    def test_constructor_casts_to_mode_dtype(self):
        with precision("single"):
            assert Tensor([1.0, 2.0]).dtype == np.float32
        with precision("double"):
            assert Tensor([1.0, 2.0]).dtype == np.float64

    def test_real_dtype_follows_mode(self):
        with precision("double"):
            assert real_dtype() == np.float64
        with precision("single"):
            assert real_dtype() == np.float32

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="extents"):
            Tensor(np.zeros((0, 3)))

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.nan])

    def test_item_requires_scalar(self):
        with pytest.raises(ValueError, match="single element"):
            Tensor([1.0, 2.0]).item()

    def test_operator_sugar_matches_ops(self):
        a = Tensor([2.0, 3.0])
        b = Tensor([4.0, 5.0])
        assert np.allclose((a + b).data, [6, 8])
        assert np.allclose((a - b).data, [-2, -2])
        assert np.allclose((a * b).data, [8, 15])
        assert np.allclose((a / b).data, [0.5, 0.6])
        assert np.allclose((-a).data, [-2, -3])
        assert np.allclose((1.0 - a).data, [-1, -2])


class TestBackwardSemantics:
    def test_simple_chain(self):
        x = _double([3.0])
        with Tape():
            y = ops.mul(x, x)       # x^2
            z = ops.add(y, x)       # x^2 + x
            backward(ops.tsum(z))
        assert np.allclose(x.grad, [7.0])  # 2x + 1

    def test_leaf_grad_accumulates_across_tapes(self):
        x = _double([2.0])
        for _ in range(2):
            with Tape():
                backward(ops.tsum(ops.mul(x, x)))
        assert np.allclose(x.grad, [8.0])

    def test_reset_grads(self):
        x = _double([2.0])
        with Tape():
            backward(ops.tsum(ops.mul(x, x)))
        reset_grads([x])
        assert x.grad is None

    def test_backward_requires_taped_scalar(self):
        x = _double([1.0, 2.0])
        with pytest.raises(ValueError, match="detached"):
            backward(x)
        with Tape():
            y = ops.mul(x, x)
            with pytest.raises(ValueError, match="scalar"):
                backward(y)

    def test_leaf_reusable_across_tapes(self):
        x = _double([4.0])
        for expected in ([8.0], [8.0]):
            with Tape():
                backward(ops.tsum(ops.mul(x, x)))
            assert np.allclose(x.grad, expected)
            reset_grads([x])

    def test_cross_tape_input_rejected(self):
        x = _double([1.0])
        with Tape():
            y = ops.mul(x, x)
        with Tape():
            with pytest.raises(ValueError, match="different tape"):
                ops.add(y, y)

    def test_disconnected_branch_gets_zero_grad(self):
        x = _double([1.0])
        z = _double([5.0])
        with Tape():
            ops.mul(z, z)  # on tape but not feeding the root
            backward(ops.tsum(ops.mul(x, x)))
        assert np.allclose(z.grad, [0.0])

    def test_detached_execution_has_no_graph(self):
        x = _double([1.0])
        y = ops.mul(x, x)
        assert y.tape is None


class TestElementwise:
    def test_binary_needs_a_tensor(self):
        with pytest.raises(TypeError):
            ops.add(1.0, 2.0)

    def test_broadcast_singleton(self):
        a = _double(np.ones((2, 3)))
        b = _double(np.array([[10.0, 20.0, 30.0]]))
        out = ops.add(a, b)
        assert out.shape == (2, 3)
        with Tape():
            backward(ops.tsum(ops.mul(a, b)))
        # b was broadcast over two rows, so its gradient sums them
        assert np.allclose(b.grad, [[2.0, 2.0, 2.0]])

    def test_broadcast_rank_mismatch_rejected(self):
        with pytest.raises(ValueError, match="rank"):
            ops.add(_double(np.ones((2, 3))), _double(np.ones(3)))

    def test_broadcast_extent_mismatch_rejected(self):
        with pytest.raises(ValueError, match="axis 1"):
            ops.add(_double(np.ones((2, 3))), _double(np.ones((2, 4))))

    def test_max_min_tie_goes_to_first_operand(self):
        a = _double([1.0, 5.0])
        b = _double([1.0, 2.0])
        with Tape():
            backward(ops.tsum(ops.maximum(a, b)))
        assert np.allclose(a.grad, [1.0, 1.0])
        assert np.allclose(b.grad, [0.0, 0.0])
        reset_grads([a, b])
        with Tape():
            backward(ops.tsum(ops.minimum(a, b)))
        assert np.allclose(a.grad, [1.0, 0.0])
        assert np.allclose(b.grad, [0.0, 1.0])

    def test_sigmoid_stable_at_extremes(self):
        y = ops.sigmoid(_double([-1000.0, 0.0, 1000.0]))
        assert np.allclose(y.data, [0.0, 0.5, 1.0])
        assert np.all(np.isfinite(y.data))

    def test_relu_and_subgradient_at_zero(self):
        x = _double([-1.0, 0.0, 2.0])
        with Tape():
            backward(ops.tsum(ops.relu(x)))
        assert np.allclose(x.grad, [0.0, 0.0, 1.0])

    def test_sqrt_guard_at_zero(self):
        x = _double([0.0, 4.0])
        with Tape():
            backward(ops.tsum(ops.sqrt(x)))
        assert np.all(np.isfinite(x.grad))
        assert np.allclose(x.grad[1], 0.25)

    def test_abs_sign_gradient(self):
        x = _double([-3.0, 0.0, 2.0])
        with Tape():
            backward(ops.tsum(ops.absolute(x)))
        assert np.allclose(x.grad, [-1.0, 0.0, 1.0])

    def test_clamp_interior_and_boundary(self):
        x = _double([-2.0, 0.0, 1.0, 3.0])
        out = ops.clamp(x, 0.0, 1.0)
        assert np.allclose(out.data, [0.0, 0.0, 1.0, 1.0])
        with Tape():
            backward(ops.tsum(ops.clamp(x, 0.0, 1.0)))
        # closed interval: both boundary points keep the interior slope
        assert np.allclose(x.grad, [0.0, 1.0, 1.0, 0.0])

    def test_tmean_gradient(self):
        x = _double(np.arange(6.0).reshape(2, 3))
        with Tape():
            backward(ops.tmean(x))
        assert np.allclose(x.grad, np.full((2, 3), 1.0 / 6.0))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
           st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    def test_add_mul_match_numpy(self, xs, ys):
        m = min(len(xs), len(ys))
        a = np.asarray(xs[:m], dtype=np.float64)
        b = np.asarray(ys[:m], dtype=np.float64)
        assert np.array_equal(ops.add(_double(a), _double(b)).data, a + b)
        assert np.array_equal(ops.mul(_double(a), _double(b)).data, a * b)

    def test_composite_grad_check(self):
        rng = np.random.default_rng(11)
        with precision("double"):
            x = Tensor(rng.uniform(0.5, 1.5, (2, 3)))
            y = Tensor(rng.uniform(0.5, 1.5, (2, 3)))

            def f():
                z = ops.div(ops.mul(x, y), ops.add(x, y))
                return ops.tsum(ops.sigmoid(z))

            assert grad_check(f, [x, y]) < 1e-8


def _naive_conv2d(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for yi in range(ho):
                for xi in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (x[ni, ci, yi * stride + ki, xi * stride + kj]
                                        * w[oi, ci, ki, kj])
                    out[ni, oi, yi, xi] = acc
            if b is not None:
                out[ni, oi] += b[oi]
    return out


class TestConv2d:
    @pytest.mark.parametrize("shape,o,k,s,p", [
        ((1, 1, 5, 5), 2, 3, 1, 0),
        ((2, 3, 8, 8), 4, 3, 2, 1),
        ((1, 2, 7, 7), 3, 1, 1, 0),
        ((2, 2, 6, 6), 2, 3, 1, 1),
        ((1, 4, 9, 9), 1, 5, 2, 2),
    ])
    def test_matches_naive_loop(self, shape, o, k, s, p):
        rng = np.random.default_rng(hash((shape, o, k, s, p)) % 2**32)
        with precision("double"):
            x = Tensor(rng.standard_normal(shape))
            w = Tensor(rng.standard_normal((o, shape[1], k, k)))
            b = Tensor(rng.standard_normal(o))
            got = ops.conv2d(x, w, b, stride=s, padding=p).data
            want = _naive_conv2d(x.data, w.data, b.data, s, p)
            denom = np.maximum(np.abs(want), 1.0)
            assert np.max(np.abs(got - want) / denom) < 1e-12

    def test_floor_output_size(self):
        x = Tensor(np.zeros((1, 1, 8, 8)))
        w = Tensor(np.zeros((1, 1, 3, 3)))
        assert ops.conv2d(x, w, stride=2, padding=1).shape == (1, 1, 4, 4)

    def test_error_messages_name_offender(self):
        x = Tensor(np.zeros((1, 2, 5, 5)))
        with pytest.raises(ValueError, match="4-D"):
            ops.conv2d(Tensor(np.zeros((5, 5))), Tensor(np.zeros((1, 1, 3, 3))))
        with pytest.raises(ValueError, match="square"):
            ops.conv2d(x, Tensor(np.zeros((1, 2, 3, 2))))
        with pytest.raises(ValueError, match="input channels"):
            ops.conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ValueError, match="bias"):
            ops.conv2d(x, Tensor(np.zeros((2, 2, 3, 3))), Tensor(np.zeros(3)))
        with pytest.raises(ValueError, match="not positive"):
            ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))
        with pytest.raises(ValueError, match="stride"):
            ops.conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), stride=0)

    def test_grad_check_with_stride_and_padding(self):
        rng = np.random.default_rng(3)
        with precision("double"):
            x = Tensor(rng.standard_normal((2, 2, 6, 6)))
            w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5)
            b = Tensor(rng.standard_normal(3) * 0.5)
            r = Tensor(rng.standard_normal((2, 3, 3, 3)))

            def f():
                y = ops.conv2d(x, w, b, stride=2, padding=1)
                return ops.tsum(ops.mul(y, r))

            assert grad_check(f, [x, w, b]) < 1e-7


class TestGlobalPool:
    def test_average(self):
        x = _double(np.arange(8.0).reshape(1, 2, 2, 2))
        out = ops.global_pool(x, "average")
        assert np.allclose(out.data.reshape(2), [1.5, 5.5])

    def test_max_forward_and_first_argmax_backward(self):
        plane = np.array([[1.0, 7.0], [7.0, 0.0]])
        x = _double(plane.reshape(1, 1, 2, 2))
        with Tape():
            backward(ops.tsum(ops.global_pool(x, "max")))
        # the tied maximum routes to the first element in row-major order
        assert np.allclose(x.grad.reshape(2, 2), [[0.0, 1.0], [0.0, 0.0]])

    def test_median_odd_and_even(self):
        odd = _double(np.array([5.0, 1.0, 9.0, 3.0, 7.0, 2.0, 8.0, 4.0, 6.0]
                               ).reshape(1, 1, 3, 3))
        assert ops.global_pool(odd, "median").item() == 5.0
        even = _double(np.array([4.0, 1.0, 3.0, 2.0]).reshape(1, 1, 2, 2))
        assert ops.global_pool(even, "median").item() == 2.5

    def test_median_matches_sort_oracle_all_plane_sizes(self):
        rng = np.random.default_rng(17)
        with precision("double"):
            for hw in range(1, 65):
                h = 1 if hw == 1 else next(d for d in range(int(hw ** 0.5), 0, -1)
                                           if hw % d == 0)
                vals = rng.standard_normal((2, 3, h, hw // h))
                got = ops.global_pool(Tensor(vals), "median").data.reshape(2, 3)
                want = np.median(vals.reshape(2, 3, -1), axis=2)
                assert np.array_equal(got, want), f"plane size {hw}"

    def test_median_even_gradient_split(self):
        x = _double(np.array([4.0, 1.0, 3.0, 2.0]).reshape(1, 1, 2, 2))
        with Tape():
            backward(ops.tsum(ops.global_pool(x, "median")))
        assert np.allclose(x.grad.reshape(4), [0.0, 0.0, 0.5, 0.5])

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown kind"):
            ops.global_pool(_double(np.ones((1, 1, 2, 2))), "mode")


class TestChannelOpsAndGather:
    def test_channel_mean_max(self):
        x = _double(np.arange(8.0).reshape(1, 2, 2, 2))
        assert np.allclose(ops.channel_mean(x).data.reshape(4), [2, 3, 4, 5])
        assert np.allclose(ops.channel_max(x).data.reshape(4), [4, 5, 6, 7])

    def test_channel_max_tie_first_channel(self):
        x = _double(np.ones((1, 3, 1, 1)))
        with Tape():
            backward(ops.tsum(ops.channel_max(x)))
        assert np.allclose(x.grad.reshape(3), [1.0, 0.0, 0.0])

    def test_slice_concat_roundtrip(self):
        rng = np.random.default_rng(23)
        x = _double(rng.standard_normal((2, 6, 3, 3)))
        parts = [ops.slice_channels(x, i, i + 2) for i in (0, 2, 4)]
        back = ops.concat_channels(parts)
        assert np.array_equal(back.data, x.data)

    def test_concat_shape_mismatch(self):
        a = _double(np.ones((1, 2, 3, 3)))
        b = _double(np.ones((1, 2, 4, 4)))
        with pytest.raises(ValueError, match="part 1"):
            ops.concat_channels([a, b])

    def test_slice_range_validation(self):
        x = _double(np.ones((1, 4, 2, 2)))
        with pytest.raises(ValueError, match="slice_channels"):
            ops.slice_channels(x, 2, 2)

    def test_select_cells_gather_and_scatter_add(self):
        x = _double(np.arange(16.0).reshape(1, 4, 2, 2))
        out = ops.select_cells(x, [0, 0], [1, 1], [0, 0])
        assert np.allclose(out.data, [[2, 6, 10, 14], [2, 6, 10, 14]])
        with Tape():
            y = ops.select_cells(x, [0, 0], [1, 1], [0, 0])
            backward(ops.tsum(y))
        # the duplicated cell accumulates both contributions
        assert np.allclose(x.grad[0, :, 1, 0], [2.0, 2.0, 2.0, 2.0])
        assert x.grad.sum() == 8.0

    def test_column_stack_roundtrip(self):
        x = _double(np.arange(6.0).reshape(3, 2))
        cols = [ops.column(x, j) for j in range(2)]
        assert np.array_equal(ops.stack_columns(cols).data, x.data)
        with pytest.raises(ValueError, match="out of range"):
            ops.column(x, 2)

    def test_bce_with_logits_matches_definition_and_is_stable(self):
        z = np.array([-800.0, -2.0, 0.0, 3.0, 800.0])
        t = np.array([0.0, 1.0, 0.5, 0.0, 1.0])
        out = ops.bce_with_logits(_double(z), t)
        assert np.all(np.isfinite(out.data))
        interior = slice(1, 4)
        sig = 1.0 / (1.0 + np.exp(-z[interior]))
        want = -(t[interior] * np.log(sig) + (1 - t[interior]) * np.log(1 - sig))
        assert np.allclose(out.data[interior], want, atol=1e-12)

    def test_bce_gradient_is_sigmoid_minus_target(self):
        z = _double([0.5, -1.5])
        t = np.array([1.0, 0.0])
        with Tape():
            backward(ops.tsum(ops.bce_with_logits(z, t)))
        sig = 1.0 / (1.0 + np.exp(-z.data))
        assert np.allclose(z.grad, sig - t, atol=1e-12)


class TestDebugSentinel:
    def test_names_the_offending_op(self):
        set_debug(True)
        try:
            with np.errstate(divide="ignore"):
                with pytest.raises(NonFiniteError, match="div"):
                    ops.div(Tensor([1.0]), Tensor([0.0]))
        finally:
            set_debug(False)

    def test_off_by_default_lets_inf_through(self):
        with np.errstate(divide="ignore"):
            out = ops.div(Tensor([1.0]), Tensor([0.0]))
        assert np.isinf(out.data[0])
