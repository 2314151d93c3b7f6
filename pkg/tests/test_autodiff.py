import numpy as np
import pytest

from quadsci import autodiff as ad
from quadsci.errors import ShapeError

TOL = 1e-4


def fdiff_check(build_loss, tensors, step=1e-6, coords=32, seed=0):
    """Compare analytic gradients of scalar build_loss(*tensors) against
    central differences on a random coordinate subsample of each input."""
    loss = build_loss(*tensors)
    loss.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "missing gradient"
        flat = t.data.ravel()
        n = flat.size
        picks = rng.choice(n, size=min(coords, n), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            lp = build_loss(*tensors).data
            flat[i] = orig - step
            lm = build_loss(*tensors).data
            flat[i] = orig
            num = (lp - lm) / (2 * step)
            ana = t.grad.ravel()[i]
            denom = max(abs(num), abs(ana), 1e-8)
            worst = max(worst, abs(num - ana) / denom)
    return worst


def T(rng, shape, scale=1.0):
    return ad.Tensor(scale * rng.standard_normal(shape), requires_grad=True)


class TestBasics:
    def test_sum_of_products_exact(self):
        w = ad.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        x = np.array([4.0, 5.0, 6.0])
        loss = ad.sum_all(ad.mul(w, x))
        loss.backward()
        np.testing.assert_array_equal(w.grad, x)

    def test_square_at_three(self):
        w = ad.Tensor(np.array(3.0), requires_grad=True)
        ad.square(w).backward()
        assert w.grad == pytest.approx(6.0)

    def test_nonscalar_backward_rejected(self):
        t = ad.Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ShapeError):
            ad.mul(t, 2.0).backward()

    def test_no_grad_blocks_recording(self):
        t = ad.Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            out = ad.mul(t, 2.0)
        assert out._parents == () and not out.requires_grad

    def test_broadcast_add(self):
        rng = np.random.default_rng(1)
        a = T(rng, (4, 3))
        b = T(rng, (3,))
        assert fdiff_check(lambda a, b: ad.sum_all(ad.square(ad.add(a, b))), [a, b]) < TOL

    def test_gradient_accumulates_on_reuse(self):
        w = ad.Tensor(np.array(2.0), requires_grad=True)
        loss = ad.add(ad.mul(w, w), ad.mul(w, 3.0))  # w^2 + 3w
        loss.backward()
        assert w.grad == pytest.approx(7.0)


class TestActivations:
    @pytest.mark.parametrize("fn", [ad.sigmoid, ad.silu, ad.gelu, ad.softplus_t])
    def test_fdiff(self, fn):
        rng = np.random.default_rng(2)
        x = T(rng, (5, 7))
        assert fdiff_check(lambda x: ad.mean_all(fn(x)), [x]) < TOL

    def test_gelu_values(self):
        # exact erf formulation: gelu(0) = 0, gelu(x) -> x for large x
        x = ad.Tensor(np.array([0.0, 10.0, -10.0]))
        y = ad.gelu(x).data
        assert y[0] == 0.0
        assert y[1] == pytest.approx(10.0, abs=1e-12)
        assert y[2] == pytest.approx(0.0, abs=1e-12)


class TestLinearAlgebra:
    def test_matmul(self):
        rng = np.random.default_rng(3)
        a, b = T(rng, (4, 5)), T(rng, (5, 3))
        assert fdiff_check(lambda a, b: ad.mean_all(ad.square(ad.matmul(a, b))), [a, b]) < TOL

    def test_linear(self):
        rng = np.random.default_rng(4)
        x, w, b = T(rng, (2, 6, 5)), T(rng, (3, 5)), T(rng, (3,))
        assert (
            fdiff_check(lambda x, w, b: ad.mean_all(ad.square(ad.linear(x, w, b))), [x, w, b])
            < TOL
        )

    def test_layer_norm(self):
        rng = np.random.default_rng(5)
        x, w, b = T(rng, (4, 6)), T(rng, (6,), scale=0.5), T(rng, (6,), scale=0.5)
        w.data += 1.0
        assert (
            fdiff_check(
                lambda x, w, b: ad.mean_all(ad.square(ad.layer_norm(x, w, b))), [x, w, b]
            )
            < TOL
        )

    def test_layer_norm_normalizes(self):
        rng = np.random.default_rng(6)
        x = ad.Tensor(rng.standard_normal((3, 8)) * 5 + 2)
        out = ad.layer_norm(x, ad.Tensor(np.ones(8)), ad.Tensor(np.zeros(8))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-3)


class TestConvolutions:
    def test_conv1d_causal_fdiff(self):
        rng = np.random.default_rng(7)
        x, w, b = T(rng, (12, 3)), T(rng, (3, 4)), T(rng, (3,))
        assert (
            fdiff_check(
                lambda x, w, b: ad.mean_all(ad.square(ad.conv1d_depthwise_causal(x, w, b))),
                [x, w, b],
            )
            < TOL
        )

    def test_conv1d_causality(self):
        # output at step l must not depend on inputs after l
        rng = np.random.default_rng(8)
        w = ad.Tensor(rng.standard_normal((2, 4)))
        x1 = rng.standard_normal((10, 2))
        x2 = x1.copy()
        x2[7:] += 1.0  # perturb the future
        y1 = ad.conv1d_depthwise_causal(ad.Tensor(x1), w).data
        y2 = ad.conv1d_depthwise_causal(ad.Tensor(x2), w).data
        np.testing.assert_array_equal(y1[:7], y2[:7])

    def test_conv3d_fdiff(self):
        rng = np.random.default_rng(9)
        x, w, b = T(rng, (3, 4, 4, 2)), T(rng, (3, 2, 3, 3, 3), scale=0.3), T(rng, (3,))
        assert (
            fdiff_check(
                lambda x, w, b: ad.mean_all(ad.square(ad.conv3d(x, w, b))), [x, w, b]
            )
            < TOL
        )

    def test_conv3d_identity_kernel(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 4, 4, 3))
        w = np.zeros((3, 3, 1, 1, 1))
        for c in range(3):
            w[c, c, 0, 0, 0] = 1.0
        out = ad.conv3d(ad.Tensor(x), ad.Tensor(w)).data
        np.testing.assert_allclose(out, x, atol=1e-14)

    def test_conv3d_depthwise_fdiff(self):
        rng = np.random.default_rng(11)
        x, w, b = T(rng, (3, 4, 4, 2)), T(rng, (2, 3, 3, 3), scale=0.3), T(rng, (2,))
        assert (
            fdiff_check(
                lambda x, w, b: ad.mean_all(ad.square(ad.conv3d_depthwise(x, w, b))),
                [x, w, b],
            )
            < TOL
        )


class TestResampling:
    def test_maxpool_fdiff(self):
        rng = np.random.default_rng(12)
        # dither so no window has near-ties (fdiff would cross the argmax)
        x = ad.Tensor(
            np.arange(2 * 4 * 4 * 3, dtype=float).reshape(2, 4, 4, 3)
            + 0.1 * rng.standard_normal((2, 4, 4, 3)),
            requires_grad=True,
        )
        assert fdiff_check(lambda x: ad.mean_all(ad.square(ad.maxpool2x2(x))), [x]) < TOL

    def test_maxpool_values(self):
        x = np.zeros((1, 2, 2, 1))
        x[0, :, :, 0] = [[1, 4], [3, 2]]
        out = ad.maxpool2x2(ad.Tensor(x)).data
        assert out[0, 0, 0, 0] == 4.0

    def test_maxpool_tie_routes_to_first_slot(self):
        x = ad.Tensor(np.ones((1, 2, 2, 1)), requires_grad=True)
        ad.sum_all(ad.maxpool2x2(x)).backward()
        np.testing.assert_array_equal(x.grad[0, :, :, 0], [[1, 0], [0, 0]])

    def test_upsample_fdiff(self):
        rng = np.random.default_rng(13)
        x = T(rng, (2, 3, 3, 2))
        assert fdiff_check(lambda x: ad.mean_all(ad.square(ad.upsample_nearest2x(x))), [x]) < TOL

    def test_upsample_then_pool_identity(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((2, 3, 3, 2))
        out = ad.maxpool2x2(ad.upsample_nearest2x(ad.Tensor(x))).data
        np.testing.assert_array_equal(out, x)


class TestReductionsAndShapes:
    def test_mean_axes_fdiff(self):
        rng = np.random.default_rng(15)
        x = T(rng, (3, 4, 5))
        assert fdiff_check(lambda x: ad.sum_all(ad.square(ad.mean_axes(x, (0, 2)))), [x]) < TOL

    def test_reshape_transpose_flip(self):
        rng = np.random.default_rng(16)
        x = T(rng, (2, 3, 4))

        def loss(x):
            y = ad.transpose(x, (2, 0, 1))
            y = ad.flip(y, axis=1)
            y = ad.reshape(y, (4, 6))
            return ad.mean_all(ad.square(y))

        assert fdiff_check(loss, [x]) < TOL

    def test_mse_value(self):
        a = ad.Tensor(np.array([1.0, 2.0]))
        b = ad.Tensor(np.array([0.0, 4.0]))
        assert ad.mse(a, b).data == pytest.approx(2.5)


class TestSelectiveScanOp:
    def test_fdiff_all_inputs(self):
        rng = np.random.default_rng(17)
        L, C, N = 8, 3, 4
        x = T(rng, (L, C))
        delta_raw = T(rng, (L, C))
        a = ad.Tensor(-np.exp(rng.uniform(-1, 1, (C, N))), requires_grad=True)
        b_seq = T(rng, (L, N))
        c_seq = T(rng, (L, N))

        def loss(x, delta_raw, a, b_seq, c_seq):
            delta = ad.softplus_t(delta_raw)
            return ad.mean_all(ad.square(ad.selective_scan_op(x, delta, a, b_seq, c_seq)))

        assert fdiff_check(loss, [x, delta_raw, a, b_seq, c_seq], coords=16) < TOL

    def test_forward_matches_plain_scan(self):
        from quadsci.ssm import (
            ScanDirection,
            SsmParams,
            scan_coefficients,
            selective_scan,
        )

        rng = np.random.default_rng(18)
        params = SsmParams(
            channels=3,
            state_size=6,
            a_log=rng.uniform(-2, 1, size=(3, 6)),
            w_delta=0.3 * rng.standard_normal((3, 3)),
            b_delta=rng.uniform(-2, 0, size=3),
            w_b=0.5 * rng.standard_normal((6, 3)),
            w_c=0.5 * rng.standard_normal((6, 3)),
        )
        seq = rng.standard_normal((15, 3))
        delta, b_seq, c_seq, _, _ = scan_coefficients(seq, params)
        y_op = ad.selective_scan_op(
            ad.Tensor(seq), ad.Tensor(delta), ad.Tensor(params.a),
            ad.Tensor(b_seq), ad.Tensor(c_seq),
        ).data
        y_ref = selective_scan(seq, params, ScanDirection.FORWARD)
        np.testing.assert_allclose(y_op, y_ref, atol=1e-14)

    def test_limit_branch_gradient(self):
        # a at the magnitude threshold exercises the delta^2/2 limit path
        rng = np.random.default_rng(19)
        L, C, N = 5, 2, 3
        x = T(rng, (L, C))
        delta = ad.Tensor(np.full((L, C), 0.2), requires_grad=True)
        a = ad.Tensor(np.full((C, N), -1e-12), requires_grad=True)
        b_seq = T(rng, (L, N))
        c_seq = T(rng, (L, N))
        loss = ad.mean_all(ad.square(ad.selective_scan_op(x, delta, a, b_seq, c_seq)))
        loss.backward()
        assert np.all(np.isfinite(x.grad))
        assert np.all(np.isfinite(delta.grad))
