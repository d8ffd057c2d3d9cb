import numpy as np
import pytest

from tmvos.ops import (
    ConvKernel,
    DimensionError,
    FeatureMap,
    ScoreMap,
    bilinear_upsample,
    bilinear_upsample_adjoint,
    conv2d,
    conv2d_adjoint,
    kernel_grad_adjoint,
)


def conv2d_reference(x, k):
    """Nested-loop direct-summation oracle (zero padding, no kernel flip)."""
    oc, ic, kh, kw = k.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    _, h, w = x.shape
    out = np.zeros((oc, h, w), dtype=np.float64)
    for o in range(oc):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for c in range(ic):
                    for u in range(kh):
                        for v in range(kw):
                            ii, jj = i + u - ph, j + v - pw
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += float(k[o, c, u, v]) * float(x[c, ii, jj])
                out[o, i, j] = acc
    return out


def bilinear_reference(s, factor):
    """Pointwise evaluation of the half-pixel-center interpolation formula."""
    n0, n1 = s.shape
    out = np.zeros((n0 * factor, n1 * factor), dtype=np.float64)
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            sy = min(max((i + 0.5) / factor - 0.5, 0.0), n0 - 1.0)
            sx = min(max((j + 0.5) / factor - 0.5, 0.0), n1 - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, n0 - 1), min(x0 + 1, n1 - 1)
            ty, tx = sy - y0, sx - x0
            out[i, j] = ((1 - ty) * (1 - tx) * s[y0, x0] + (1 - ty) * tx * s[y0, x1]
                         + ty * (1 - tx) * s[y1, x0] + ty * tx * s[y1, x1])
    return out


def random_map(rng, c, h, w, stride=1):
    return FeatureMap(rng.standard_normal((c, h, w)).astype(np.float32), stride=stride)


class TestConv2d:
    def test_scalar_multiply(self):
        x = FeatureMap(np.full((1, 1, 1), 2.0, np.float32))
        k = ConvKernel(np.full((1, 1, 1, 1), 3.0, np.float32))
        assert conv2d(x, k).data[0, 0, 0] == pytest.approx(6.0)

    def test_identity_kernel(self):
        rng = np.random.default_rng(3)
        x = random_map(rng, 2, 6, 7)
        k = np.zeros((2, 2, 3, 3), np.float32)
        k[0, 0, 1, 1] = 1.0
        k[1, 1, 1, 1] = 1.0
        out = conv2d(x, ConvKernel(k))
        np.testing.assert_allclose(out.data, x.data, rtol=1e-6)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(7)
        x = random_map(rng, 2, 5, 5)
        k = ConvKernel(rng.standard_normal((1, 2, 3, 3)).astype(np.float32))
        expected = conv2d_reference(x.data, k.data)
        np.testing.assert_allclose(conv2d(x, k).data, expected, atol=1e-6)

    def test_preserves_geometry(self):
        rng = np.random.default_rng(11)
        x = random_map(rng, 4, 9, 5, stride=16)
        k = ConvKernel(rng.standard_normal((3, 4, 3, 3)).astype(np.float32))
        out = conv2d(x, k)
        assert (out.channels, out.height, out.width, out.stride) == (3, 9, 5, 16)

    def test_channel_mismatch(self):
        x = FeatureMap(np.zeros((2, 3, 3), np.float32))
        k = ConvKernel(np.zeros((1, 3, 1, 1), np.float32))
        with pytest.raises(DimensionError):
            conv2d(x, k)

    def test_linearity(self):
        rng = np.random.default_rng(13)
        x = random_map(rng, 3, 6, 6)
        y = random_map(rng, 3, 6, 6)
        k = ConvKernel(rng.standard_normal((2, 3, 3, 3)).astype(np.float32))
        a, b = 0.7, -1.3
        mixed = FeatureMap(a * x.data + b * y.data)
        lhs = conv2d(mixed, k).data
        rhs = a * conv2d(x, k).data + b * conv2d(y, k).data
        np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            ConvKernel(np.zeros((1, 1, 2, 2), np.float32))


class TestConvAdjoint:
    def test_scalar(self):
        g = FeatureMap(np.full((1, 1, 1), 2.0, np.float32))
        k = ConvKernel(np.full((1, 1, 1, 1), 3.0, np.float32))
        assert conv2d_adjoint(g, k).data[0, 0, 0] == pytest.approx(6.0)

    def test_identity_kernel(self):
        rng = np.random.default_rng(17)
        g = random_map(rng, 1, 5, 5)
        k = np.zeros((1, 1, 3, 3), np.float32)
        k[0, 0, 1, 1] = 1.0
        np.testing.assert_allclose(conv2d_adjoint(g, ConvKernel(k)).data, g.data, rtol=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_inner_product_identity(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = random_map(rng, 3, 6, 7)
        k = ConvKernel(rng.standard_normal((2, 3, 3, 3)).astype(np.float32))
        g = random_map(rng, 2, 6, 7)
        lhs = np.vdot(conv2d(x, k).data.astype(np.float64), g.data.astype(np.float64))
        rhs = np.vdot(x.data.astype(np.float64), conv2d_adjoint(g, k).data.astype(np.float64))
        assert lhs == pytest.approx(rhs, rel=1e-5)

    def test_channel_mismatch(self):
        g = FeatureMap(np.zeros((2, 3, 3), np.float32))
        k = ConvKernel(np.zeros((1, 2, 1, 1), np.float32))
        with pytest.raises(DimensionError):
            conv2d_adjoint(g, k)


class TestKernelGrad:
    def test_constant_direct_sum(self):
        # x and g all ones on a 2x2 grid with a 1x1 kernel: gradient is the
        # plain sum over the four positions
        x = FeatureMap(np.ones((1, 2, 2), np.float32))
        g = FeatureMap(np.ones((1, 2, 2), np.float32))
        grad = kernel_grad_adjoint(x, g, (1, 1, 1, 1))
        assert grad.data[0, 0, 0, 0] == pytest.approx(4.0)

    def test_zero_gradient(self):
        rng = np.random.default_rng(23)
        x = random_map(rng, 2, 4, 4)
        g = FeatureMap(np.zeros((1, 4, 4), np.float32))
        grad = kernel_grad_adjoint(x, g, (1, 2, 3, 3))
        assert np.all(grad.data == 0.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_inner_product_identity(self, seed):
        rng = np.random.default_rng(200 + seed)
        x = random_map(rng, 3, 5, 6)
        k = ConvKernel(rng.standard_normal((2, 3, 3, 3)).astype(np.float32))
        g = random_map(rng, 2, 5, 6)
        lhs = np.vdot(conv2d(x, k).data.astype(np.float64), g.data.astype(np.float64))
        grad = kernel_grad_adjoint(x, g, k.data.shape)
        rhs = np.vdot(k.data.astype(np.float64), grad.data.astype(np.float64))
        assert lhs == pytest.approx(rhs, rel=1e-5)

    def test_finite_difference(self):
        rng = np.random.default_rng(29)
        x = random_map(rng, 2, 4, 5)
        k = rng.standard_normal((1, 2, 3, 3)).astype(np.float64)
        g = random_map(rng, 1, 4, 5)
        grad = kernel_grad_adjoint(x, g, k.shape).data

        def inner(kk):
            return np.vdot(conv2d(x, ConvKernel(kk.astype(np.float32))).data, g.data)

        eps = 1e-3
        for idx in [(0, 0, 0, 0), (0, 1, 2, 1), (0, 0, 1, 1)]:
            kp, km = k.copy(), k.copy()
            kp[idx] += eps
            km[idx] -= eps
            fd = (inner(kp) - inner(km)) / (2 * eps)
            assert grad[idx] == pytest.approx(fd, rel=1e-3, abs=1e-4)

    def test_shape_mismatch(self):
        x = FeatureMap(np.zeros((2, 4, 4), np.float32))
        g = FeatureMap(np.zeros((1, 3, 4), np.float32))
        with pytest.raises(DimensionError):
            kernel_grad_adjoint(x, g, (1, 2, 3, 3))


class TestBilinearUpsample:
    def test_constant_map(self):
        s = ScoreMap(np.full((3, 4), 2.5, np.float32), stride=8)
        out = bilinear_upsample(s, 4)
        assert out.data.shape == (12, 16)
        assert out.stride == 2
        np.testing.assert_allclose(out.data, 2.5, rtol=1e-6)

    def test_factor_one_identity(self):
        rng = np.random.default_rng(31)
        s = ScoreMap(rng.standard_normal((4, 5)).astype(np.float32), stride=16)
        out = bilinear_upsample(s, 1)
        np.testing.assert_array_equal(out.data, s.data)
        assert out.stride == 16

    def test_matches_pointwise_formula(self):
        s = ScoreMap(np.array([[0.0, 1.0], [2.0, 3.0]], np.float32), stride=2)
        out = bilinear_upsample(s, 2)
        expected = bilinear_reference(s.data.astype(np.float64), 2)
        np.testing.assert_allclose(out.data, expected, atol=1e-6)
        # frozen corner values of the closed-form evaluation
        np.testing.assert_allclose(
            out.data,
            [[0.0, 0.25, 0.75, 1.0],
             [0.5, 0.75, 1.25, 1.5],
             [1.5, 1.75, 2.25, 2.5],
             [2.0, 2.25, 2.75, 3.0]],
            atol=1e-6)

    def test_random_matches_reference(self):
        rng = np.random.default_rng(37)
        s = ScoreMap(rng.standard_normal((5, 3)).astype(np.float32))
        out = bilinear_upsample(s, 3)
        np.testing.assert_allclose(out.data, bilinear_reference(s.data, 3), atol=1e-5)

    def test_bad_factor(self):
        s = ScoreMap(np.zeros((2, 2), np.float32))
        with pytest.raises(ValueError):
            bilinear_upsample(s, 0)


class TestBilinearUpsampleAdjoint:
    def test_factor_one_identity(self):
        rng = np.random.default_rng(41)
        g = ScoreMap(rng.standard_normal((3, 3)).astype(np.float32))
        np.testing.assert_array_equal(bilinear_upsample_adjoint(g, 1).data, g.data)

    def test_mass_preservation_factor_two(self):
        # columns of the factor-2 operator sum to 4: a constant ones gradient
        # deposits exactly 4 in every input cell
        g = ScoreMap(np.ones((8, 6), np.float32), stride=1)
        out = bilinear_upsample_adjoint(g, 2)
        np.testing.assert_allclose(out.data, 4.0, atol=1e-6)

    @pytest.mark.parametrize("seed,factor", [(s, f) for s in range(5) for f in (2, 3, 4)])
    def test_inner_product_identity(self, seed, factor):
        rng = np.random.default_rng(300 + seed)
        s = ScoreMap(rng.standard_normal((4, 5)).astype(np.float32))
        g = ScoreMap(rng.standard_normal((4 * factor, 5 * factor)).astype(np.float32))
        lhs = np.vdot(bilinear_upsample(s, factor).data.astype(np.float64),
                      g.data.astype(np.float64))
        rhs = np.vdot(s.data.astype(np.float64),
                      bilinear_upsample_adjoint(g, factor).data.astype(np.float64))
        assert lhs == pytest.approx(rhs, rel=1e-5)
