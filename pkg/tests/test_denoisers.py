import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nsamp import denoisers as dn

from oracles import brute_force_nlm, fd_divergence


finite_vectors = arrays(np.float64, st.integers(1, 30), elements=st.floats(-10, 10, allow_nan=False))


class TestSoftThreshold:
    def test_zero_input(self):
        np.testing.assert_array_equal(dn.soft_threshold(np.zeros(3), 1.0), np.zeros(3))

    def test_values(self):
        np.testing.assert_allclose(dn.soft_threshold(np.array([2.0, -0.5, 3.0]), 1.0), [1.0, 0.0, 2.0])
        np.testing.assert_allclose(dn.soft_threshold(np.array([-2.0]), 0.5), [-1.5])

    def test_divergence(self):
        x = np.array([2.0, -0.5, 3.0])
        assert dn.soft_threshold_divergence(x, 1.0) == 2.0
        assert abs(fd_divergence(lambda v: dn.soft_threshold(v, 1.0), x) - 2.0) <= 1e-6

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            dn.soft_threshold(np.ones(2), -1.0)
        with pytest.raises(ValueError):
            dn.soft_threshold_denoiser(-1.0)

    @given(finite_vectors, st.floats(0, 5))
    @settings(max_examples=50, deadline=None)
    def test_lipschitz(self, x, lam):
        y = x + np.linspace(-1, 1, x.size)
        assert np.linalg.norm(dn.soft_threshold(x, lam) - dn.soft_threshold(y, lam)) <= np.linalg.norm(x - y) + 1e-12


class TestSvt:
    def test_zero_matrix(self):
        shape = dn.MatrixShape(3, 4)
        np.testing.assert_array_equal(dn.svt(np.zeros(12), shape, 0.7), np.zeros(12))

    def test_diagonal(self):
        shape = dn.MatrixShape(2, 2)
        out = dn.svt(np.diag([3.0, 1.0]).ravel(), shape, 2.0)
        np.testing.assert_allclose(out.reshape(2, 2), np.diag([1.0, 0.0]), atol=1e-12)

    def test_output_singular_values(self):
        Y = np.random.default_rng(0).standard_normal((20, 30))
        s = np.linalg.svd(Y, compute_uv=False)
        lam = 0.5 * s[0]
        out = dn.svt(Y.ravel(), dn.MatrixShape(20, 30), lam).reshape(20, 30)
        np.testing.assert_allclose(np.linalg.svd(out, compute_uv=False), np.maximum(s - lam, 0), atol=1e-8)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dn.svt(np.ones(5), dn.MatrixShape(2, 3), 0.1)

    def test_nesting_on_diagonal(self):
        shape = dn.MatrixShape(4, 4)
        y = np.diag([5.0, 3.0, 1.5, 0.2]).ravel()
        np.testing.assert_allclose(dn.svt(dn.svt(y, shape, 0.7), shape, 1.1), dn.svt(y, shape, 1.8), atol=1e-12)

    def test_divergence_diagonal(self):
        shape = dn.MatrixShape(2, 2)
        y = np.diag([3.0, 1.0]).ravel()
        assert dn.svt_divergence(y, shape, 2.0) == pytest.approx(1.75, abs=1e-12)
        assert fd_divergence(lambda v: dn.svt(v, shape, 2.0), y) == pytest.approx(1.75, abs=1e-6)

    def test_divergence_above_sigma_max(self):
        y = np.random.default_rng(1).standard_normal(12)
        shape = dn.MatrixShape(3, 4)
        s0 = np.linalg.svd(shape.as_matrix(y), compute_uv=False)[0]
        assert dn.svt_divergence(y, shape, s0 * 1.01) == 0.0

    def test_divergence_zero_threshold(self):
        # lambda = 0 is the identity map
        y = np.random.default_rng(2).standard_normal(30)
        assert dn.svt_divergence(y, dn.MatrixShape(5, 6), 0.0) == pytest.approx(30.0, rel=1e-10)

    @pytest.mark.parametrize("n1,n2", [(20, 30), (30, 20), (8, 8)])
    def test_divergence_matches_finite_differences(self, n1, n2):
        shape = dn.MatrixShape(n1, n2)
        y = np.random.default_rng(3).standard_normal(n1 * n2)
        lam = 0.5 * np.linalg.svd(shape.as_matrix(y), compute_uv=False)[0]
        exact = dn.svt_divergence(y, shape, lam)
        assert fd_divergence(lambda v: dn.svt(v, shape, lam), y) == pytest.approx(exact, rel=1e-6)

    def test_divergence_matches_monte_carlo(self):
        shape = dn.MatrixShape(20, 30)
        y = np.random.default_rng(4).standard_normal(600)
        lam = 0.5 * np.linalg.svd(shape.as_matrix(y), compute_uv=False)[0]
        cfg = dn.DivergenceEstimatorConfig(epsilon=1e-4, num_samples=50, seed=1)
        mc = dn.mc_divergence(lambda v: dn.svt(v, shape, lam), y, cfg)
        assert abs(mc - dn.svt_divergence(y, shape, lam)) <= 0.05 * dn.svt_divergence(y, shape, lam)

    def test_tie_straddling_threshold_falls_back(self):
        shape = dn.MatrixShape(3, 3)
        y = np.diag([4.0, 2.0 + 1e-9, 2.0 - 1e-9]).ravel()
        with pytest.warns(dn.DivergenceFallbackWarning):
            val = dn.svt_divergence(y, shape, 2.0)
        assert np.isfinite(val)

    def test_tie_above_threshold_is_exact(self):
        shape = dn.MatrixShape(3, 3)
        y = np.diag([4.0, 3.0, 3.0]).ravel()
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            val = dn.svt_divergence(y, shape, 1.0)
        assert fd_divergence(lambda v: dn.svt(v, shape, 1.0), y + 1e-3 * np.arange(9)) == pytest.approx(val, rel=1e-3)

    def test_lipschitz(self):
        shape = dn.MatrixShape(6, 5)
        rng = np.random.default_rng(5)
        for _ in range(100):
            x, y = rng.standard_normal(30), rng.standard_normal(30)
            assert np.linalg.norm(dn.svt(x, shape, 0.8) - dn.svt(y, shape, 0.8)) <= np.linalg.norm(x - y) + 1e-12


class TestNlm:
    def test_constant_image_fixed_point(self):
        shape = dn.MatrixShape(7, 9)
        z = np.full(63, 0.37)
        np.testing.assert_array_equal(dn.nlm(z, shape, 3, 2, 0.1), z)

    def test_single_pixel(self):
        assert dn.nlm(np.array([0.6]), dn.MatrixShape(1, 1), 1, 1, 0.5)[0] == 0.6

    def test_matches_brute_force(self):
        Z = np.random.default_rng(6).random((16, 16))
        out = dn.nlm(Z.ravel(), dn.MatrixShape(16, 16), 3, 2, 0.5)
        np.testing.assert_allclose(out.reshape(16, 16), brute_force_nlm(Z, 3, 2, 0.5), atol=1e-10, rtol=0)

    def test_matches_brute_force_rectangular(self):
        Z = np.random.default_rng(7).random((6, 11))
        out = dn.nlm(Z.ravel(), dn.MatrixShape(6, 11), 5, 2.5, 0.3)
        np.testing.assert_allclose(out.reshape(6, 11), brute_force_nlm(Z, 5, 2.5, 0.3), atol=1e-10, rtol=0)

    @given(arrays(np.float64, (8, 8), elements=st.floats(-5, 5, allow_nan=False)), st.floats(0.05, 5))
    @settings(max_examples=40, deadline=None)
    def test_output_within_input_range(self, Z, h):
        out = dn.nlm(Z.ravel(), dn.MatrixShape(8, 8), 3, 2, h)
        assert out.min() >= Z.min() - 1e-12
        assert out.max() <= Z.max() + 1e-12

    def test_invalid_parameters(self):
        shape = dn.MatrixShape(4, 4)
        z = np.zeros(16)
        with pytest.raises(ValueError):
            dn.nlm(z, shape, 3, 2, 0.0)
        with pytest.raises(ValueError):
            dn.nlm(z, shape, 2, 2, 0.1)
        with pytest.raises(ValueError):
            dn.nlm(z, shape, 7, 2, 0.1)
        with pytest.raises(ValueError):
            dn.nlm_denoiser(shape, 3, 2, -1.0)

    def test_denoiser_uses_monte_carlo(self):
        shape = dn.MatrixShape(8, 8)
        f = dn.nlm_denoiser(shape, 3, 2, 0.5, dn.DivergenceEstimatorConfig(num_samples=3, seed=1))
        assert not f.has_exact_divergence
        z = np.random.default_rng(8).random(64)
        assert f.div(z) == f.div(z)
        assert 0 < f.div(z) < 64


class TestConvexSets:
    def test_orthant(self):
        x = np.array([1.0, -2.0])
        np.testing.assert_array_equal(dn.convex_project(x, dn.Orthant()), [1.0, 0.0])
        assert dn.Orthant().divergence(x) == 1

    def test_ball(self):
        x = np.array([0.6, 0.0, 0.8])
        ball = dn.Ball(0.5)
        np.testing.assert_allclose(dn.convex_project(x, ball), 0.5 * x)
        assert ball.divergence(x) == pytest.approx(1.0)
        assert fd_divergence(ball.project, x) == pytest.approx(1.0, rel=1e-6)

    def test_ball_finite_differences_n50(self):
        x = np.random.default_rng(9).standard_normal(50)
        ball = dn.Ball(2.0)
        assert abs(fd_divergence(ball.project, x) - ball.divergence(x)) <= 0.01 * ball.divergence(x)

    def test_box(self):
        box = dn.Box(-1.0, np.array([0.5, 2.0, 3.0]))
        x = np.array([0.7, -3.0, 1.0])
        np.testing.assert_array_equal(dn.convex_project(x, box), [0.5, -1.0, 1.0])
        assert box.divergence(x) == 1

    @pytest.mark.parametrize("cset", [dn.Orthant(), dn.Box(-0.5, 0.5), dn.Ball(1.5)])
    def test_interior_point(self, cset):
        x = np.array([0.1, 0.2, 0.3])
        np.testing.assert_array_equal(dn.convex_project(x, cset), x)
        assert cset.divergence(x) == 3
        assert cset.contains(x)

    def test_malformed_box(self):
        with pytest.raises(ValueError):
            dn.Box(1.0, 0.0)
        with pytest.raises(ValueError):
            dn.Ball(-1.0)

    @given(finite_vectors)
    @settings(max_examples=50, deadline=None)
    def test_idempotent(self, x):
        for cset in (dn.Orthant(), dn.Box(-1.0, 2.0), dn.Ball(3.0)):
            p = dn.convex_project(x, cset)
            np.testing.assert_allclose(dn.convex_project(p, cset), p, atol=1e-12, rtol=0)
            assert cset.contains(p + 0.0) or np.linalg.norm(p) <= 3.0 + 1e-12

    def test_lipschitz(self):
        rng = np.random.default_rng(10)
        for cset in (dn.Orthant(), dn.Box(-1.0, 1.0), dn.Ball(1.0)):
            for _ in range(100):
                x, y = 2 * rng.standard_normal(10), 2 * rng.standard_normal(10)
                assert np.linalg.norm(cset.project(x) - cset.project(y)) <= np.linalg.norm(x - y) + 1e-12


class TestMcDivergence:
    def test_identity(self):
        cfg = dn.DivergenceEstimatorConfig(epsilon=1e-3, num_samples=20, seed=0)
        assert abs(dn.mc_divergence(lambda v: v, np.ones(100), cfg) - 100) <= 15

    def test_zero_map(self):
        cfg = dn.DivergenceEstimatorConfig(num_samples=5)
        assert dn.mc_divergence(lambda v: np.zeros_like(v), np.ones(10), cfg) == 0.0

    def test_soft_threshold(self):
        cfg = dn.DivergenceEstimatorConfig(num_samples=200, seed=3)
        x = np.array([2.0, -0.5, 3.0])
        assert abs(dn.mc_divergence(lambda v: dn.soft_threshold(v, 1.0), x, cfg) - 2.0) <= 0.3

    def test_deterministic_given_seed(self):
        cfg = dn.DivergenceEstimatorConfig(num_samples=3, seed=5, keys=("x", 1))
        f = lambda v: np.tanh(v)  # noqa: E731
        x = np.linspace(-2, 2, 40)
        assert dn.mc_divergence(f, x, cfg) == dn.mc_divergence(f, x, cfg)
        assert dn.mc_divergence(f, x, cfg) != dn.mc_divergence(f, x, cfg.child(2))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            dn.DivergenceEstimatorConfig(epsilon=0.0)
        with pytest.raises(ValueError):
            dn.DivergenceEstimatorConfig(num_samples=0)

    @pytest.mark.parametrize("name", ["soft", "svt", "orthant", "box", "ball"])
    def test_exact_matches_monte_carlo(self, name):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(60)
        f = {
            "soft": dn.soft_threshold_denoiser(0.7),
            "svt": dn.svt_denoiser(dn.MatrixShape(6, 10), 1.0),
            "orthant": dn.projection_denoiser(dn.Orthant()),
            "box": dn.projection_denoiser(dn.Box(-0.5, 0.8)),
            "ball": dn.projection_denoiser(dn.Ball(4.0)),
        }[name]
        cfg = dn.DivergenceEstimatorConfig(epsilon=1e-4, num_samples=200, seed=2)
        exact = f.div(x)
        assert abs(dn.mc_divergence(f, x, cfg) - exact) <= 0.05 * exact


class TestDenoiser:
    def test_identity_and_zero(self):
        x = np.arange(4.0)
        np.testing.assert_array_equal(dn.identity()(x), x)
        assert dn.identity().div(x) == 4
        np.testing.assert_array_equal(dn.zero()(x), np.zeros(4))
        assert dn.zero().div(x) == 0

    def test_matrix_shape_validation(self):
        with pytest.raises(ValueError):
            dn.MatrixShape(0, 3)
